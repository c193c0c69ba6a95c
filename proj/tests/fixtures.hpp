#pragma once

#include "cmc/attribution.hpp"
#include "cmc/planted.hpp"

namespace fixtures {

/// Planted model plus a deterministic record set and its bucket-1 pairs,
/// built once and shared across test cases (construction solves the planted
/// weights numerically, which is not free).
struct PlantedFixture {
    cmc::planted::PlantedCircuit pc;
    cmc::graph::ComputationGraph g;
    std::vector<cmc::signal::ElicitationRecord> records;
    std::vector<cmc::signal::CounterfactualPair> pairs;  // bucket-1, <= 32
    std::vector<cmc::attribution::PairActivations> pas;  // cached pairs
};

const PlantedFixture& planted();

}  // namespace fixtures
