#pragma once

#include <cstdint>

#include "gridtear/netmodel.hpp"

namespace gridtear {

/// Desk case (a): a 14-node positive-sequence network coupled with two
/// 13-bus three-phase feeders.
CombinedCase make_desk_td();

/// Desk case (b): the same transmission network with a single feeder.
CombinedCase make_desk_2net();

/// Scalability ladder: a transmission chain of t_nodes with `feeders`
/// evenly-spaced feeders of feeder_buses each.
CombinedCase make_ladder(int t_nodes, int feeders, int feeder_buses);

struct RandomNetOptions {
    int min_nodes = 3;
    int max_nodes = 12;
    double sigma = 0.02;      ///< spread of the random measurement values
    bool with_gross_error = true;
};

/// Randomized standalone positive-sequence network with an anchored but
/// inconsistent measurement set; the optimizer-correctness oracle fixture.
SubNetwork make_random_standalone(std::uint64_t seed, const RandomNetOptions& opts = {});

}  // namespace gridtear
