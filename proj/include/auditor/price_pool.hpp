#pragma once

#include <array>

#include "auditor/types.hpp"

namespace auditor {

/// Default product prices in cents: 100 draws from a log-normal with median
/// $24.99 and mean $51.27, clamped to [$1.52, $359.00] with both bounds
/// included. Distinct, sorted, generated once (numpy seed 20170925).
inline constexpr std::array<Cents, 100> kDefaultPricePool = {
    152, 166, 221, 223, 232, 385, 477, 478, 491, 496,
    554, 636, 641, 646, 649, 698, 830, 915, 958, 988,
    1033, 1057, 1085, 1093, 1095, 1167, 1181, 1183, 1184, 1209,
    1257, 1259, 1278, 1294, 1433, 1504, 1578, 1598, 1643, 1742,
    1828, 1925, 1927, 2032, 2198, 2375, 2406, 2652, 2746, 2884,
    2976, 3019, 3023, 3196, 3318, 3349, 3514, 3538, 3731, 3825,
    3851, 3899, 4078, 4175, 4197, 4279, 4600, 4761, 4850, 4992,
    5056, 5083, 5372, 5986, 6127, 6223, 6968, 6999, 8666, 8817,
    9063, 9502, 9974, 10604, 11352, 11538, 11575, 11617, 11802, 12226,
    13321, 15377, 16177, 20174, 20728, 22265, 24432, 27157, 33104, 35900,
};

/// Default shipping deltas in cents. The first entry must stay 0.
inline constexpr std::array<Cents, 5> kDefaultShippingPool = {0, 499, 799, 999, 1499};

}  // namespace auditor
