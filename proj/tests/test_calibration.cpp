#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "cmc/calibration.hpp"
#include "cmc/tensor.hpp"

using namespace cmc;
using calibration::PredictionRecord;

namespace {

std::vector<PredictionRecord> randomRecords(size_t n, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> conf(0.0, 1.0);
    std::bernoulli_distribution flip(0.4);
    std::vector<PredictionRecord> out(n);
    for (auto& r : out) {
        r.confidence = conf(rng);
        r.correct = flip(rng);
    }
    return out;
}

/// Literal restatement of the ECE definition, written independently of the
/// library implementation: bucket, then sum count/N * |acc - conf|.
double eceBruteForce(const std::vector<PredictionRecord>& rs, int bins) {
    double total = 0.0;
    for (int b = 0; b < bins; ++b) {
        double lo = static_cast<double>(b) / bins, hi = static_cast<double>(b + 1) / bins;
        double conf = 0.0, acc = 0.0;
        int64_t count = 0;
        for (const auto& r : rs) {
            bool inBin = (b + 1 == bins) ? (r.confidence >= lo && r.confidence <= 1.0)
                                         : (r.confidence >= lo && r.confidence < hi);
            if (!inBin) continue;
            ++count;
            conf += r.confidence;
            acc += r.correct ? 1.0 : 0.0;
        }
        if (count == 0) continue;
        total += (static_cast<double>(count) / static_cast<double>(rs.size())) *
                 std::abs(acc / count - conf / count);
    }
    return total;
}

}  // namespace

TEST_CASE("four-record worked example: ECE 0.25") {
    // Bin [0.9,1.0): conf 0.9, accuracy 0.5, gap 0.4, weight 0.5.
    // Bin [0.1,0.2): conf 0.1, accuracy 0.0, gap 0.1, weight 0.5.
    std::vector<PredictionRecord> rs{{0.9, true}, {0.9, false}, {0.1, false}, {0.1, false}};
    CHECK(calibration::ece(rs, 10) == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("ece matches an independent brute-force evaluation") {
    for (int bins : {1, 3, 10, 17}) {
        auto rs = randomRecords(1000, 42 + static_cast<uint64_t>(bins));
        CHECK(std::abs(calibration::ece(rs, bins) - eceBruteForce(rs, bins)) <= 1e-12);
    }
}

TEST_CASE("brier matches hand values and the mean-square definition") {
    std::vector<PredictionRecord> rs{{1.0, true}, {1.0, false}, {0.5, true}, {0.5, false}};
    CHECK(calibration::brier(rs) == doctest::Approx((0.0 + 1.0 + 0.25 + 0.25) / 4.0));
    auto big = randomRecords(500, 7);
    double manual = 0.0;
    for (const auto& r : big) {
        double d = r.confidence - (r.correct ? 1.0 : 0.0);
        manual += d * d;
    }
    manual /= static_cast<double>(big.size());
    CHECK(std::abs(calibration::brier(big) - manual) <= 1e-12);
}

TEST_CASE("metrics are invariant to record order") {
    auto rs = randomRecords(300, 11);
    auto shuffled = rs;
    std::shuffle(shuffled.begin(), shuffled.end(), std::mt19937_64(5));
    CHECK(calibration::ece(rs, 10) == doctest::Approx(calibration::ece(shuffled, 10)).epsilon(1e-14));
    CHECK(calibration::brier(rs) == doctest::Approx(calibration::brier(shuffled)).epsilon(1e-14));
}

TEST_CASE("perfectly calibrated deterministic records give zero ECE") {
    // Confidence exactly 1.0 with all-correct outcomes sits in the top bin.
    std::vector<PredictionRecord> rs{{1.0, true}, {1.0, true}, {0.0, false}};
    CHECK(calibration::ece(rs, 10) == 0.0);
    CHECK(calibration::brier(rs) == 0.0);
}

TEST_CASE("reliability bins cover the full grid with empty bins zeroed") {
    std::vector<PredictionRecord> rs{{0.05, false}, {0.07, true}, {1.0, true}};
    auto bins = calibration::reliabilityBins(rs, 10);
    REQUIRE(bins.size() == 10);
    CHECK(bins[0].count == 2);
    CHECK(bins[0].meanConfidence == doctest::Approx(0.06));
    CHECK(bins[0].accuracy == doctest::Approx(0.5));
    CHECK(bins[9].count == 1);  // confidence 1.0 lands in the top bin
    for (int b = 1; b < 9; ++b) {
        CHECK(bins[b].count == 0);
        CHECK(bins[b].meanConfidence == 0.0);
        CHECK(bins[b].accuracy == 0.0);
    }
}

TEST_CASE("report bundles the metrics consistently") {
    auto rs = randomRecords(200, 31);
    auto rep = calibration::report(rs, 10);
    CHECK(rep.n == 200);
    CHECK(rep.ece == doctest::Approx(calibration::ece(rs, 10)).epsilon(1e-15));
    CHECK(rep.brier == doctest::Approx(calibration::brier(rs)).epsilon(1e-15));
    CHECK(rep.bins.size() == 10);
    CHECK_THROWS_AS(calibration::report({}, 10), Error);
    CHECK_THROWS_AS(calibration::report(rs, 0), Error);
    std::vector<PredictionRecord> bad{{1.5, true}};
    CHECK_THROWS_AS(calibration::ece(bad, 10), Error);
}

TEST_CASE("improvement percentages match the published recalibration numbers") {
    calibration::CalibrationReport base, after;
    base.ece = 0.492;
    after.ece = 0.111;
    base.brier = 1.0;
    after.brier = 1.015;
    auto imp = calibration::improvement(base, after);
    REQUIRE(imp.ecePct.has_value());
    CHECK(*imp.ecePct == doctest::Approx(77.439).epsilon(1e-3));
    REQUIRE(imp.brierPct.has_value());
    CHECK(*imp.brierPct == doctest::Approx(-1.5).epsilon(1e-9));
    base.ece = 0.0;
    CHECK_FALSE(calibration::improvement(base, after).ecePct.has_value());
}
