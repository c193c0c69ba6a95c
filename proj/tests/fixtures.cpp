#include "fixtures.hpp"

#include "cmc/kernels.hpp"

namespace fixtures {

const PlantedFixture& planted() {
    static PlantedFixture* fx = [] {
        cmc::kernels::setWorkers(4);
        cmc::model::ModelConfig cfg;
        cfg.seed = 7;
        auto* f = new PlantedFixture{cmc::planted::plantOverconfidenceCircuit(cfg),
                                     cmc::graph::ComputationGraph(cfg.nLayers, cfg.nHeads),
                                     {},
                                     {},
                                     {}};
        cmc::planted::RecordGenConfig rc;
        rc.count = 256;
        f->records = cmc::planted::generateRecords(f->pc, f->g, rc);
        cmc::signal::CandidateSets sets;
        for (const auto& r : f->records) {
            if (r.correct || f->pairs.size() >= 32) continue;
            auto p = cmc::signal::buildPair(r, f->pc.task.pairTemplate, f->pc.weights, f->g, sets);
            if (p.deltaTsld <= -1.0) {
                p.bucket = 1;
                f->pairs.push_back(std::move(p));
            }
        }
        for (const auto& p : f->pairs)
            f->pas.push_back(cmc::attribution::cachePair(p, f->pc.weights, f->g));
        return f;
    }();
    return *fx;
}

}  // namespace fixtures
