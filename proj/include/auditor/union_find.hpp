#pragma once

#include <cstdint>
#include <numeric>
#include <utility>
#include <vector>

namespace auditor {

/// Disjoint sets over [0, n) with union by size and path halving.
class UnionFind {
public:
    explicit UnionFind(std::size_t n) : parent_(n), size_(n, 1) {
        std::iota(parent_.begin(), parent_.end(), std::uint32_t{0});
    }

    std::uint32_t find(std::uint32_t x) {
        while (parent_[x] != x) {
            parent_[x] = parent_[parent_[x]];
            x = parent_[x];
        }
        return x;
    }

    /// Returns true if the two elements were in different sets.
    bool unite(std::uint32_t a, std::uint32_t b) {
        a = find(a);
        b = find(b);
        if (a == b) return false;
        if (size_[a] < size_[b]) std::swap(a, b);
        parent_[b] = a;
        size_[a] += size_[b];
        return true;
    }

    bool same(std::uint32_t a, std::uint32_t b) { return find(a) == find(b); }

    std::uint32_t set_size(std::uint32_t x) { return size_[find(x)]; }

    std::size_t size() const { return parent_.size(); }

private:
    std::vector<std::uint32_t> parent_;
    std::vector<std::uint32_t> size_;
};

}  // namespace auditor
