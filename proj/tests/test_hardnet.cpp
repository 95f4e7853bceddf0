#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <set>

#include "cws/hardnet.hpp"
#include "cws/rng.hpp"

using namespace cws;

namespace {

// divisor-enumeration oracle, written independently of link_set
std::vector<int> link_oracle(int n, int k) {
    std::set<int> srcs;
    for (int f = 1; f <= n; ++f) {
        bool divides = (n / f) * f == n;
        if (divides && k - f >= 0) srcs.insert(k - f);
    }
    return {srcs.begin(), srcs.end()};
}

double population_sd(const std::vector<int>& xs) {
    double m = 0;
    for (int x : xs) m += x;
    m /= static_cast<double>(xs.size());
    double ss = 0;
    for (int x : xs) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(xs.size()));
}

}  // namespace

TEST_CASE("link_set matches the factors rule") {
    CHECK(link_set(9, 9) == std::vector<int>{0, 6, 8});
    CHECK(link_set(9, 1) == std::vector<int>{0});
    CHECK(link_set(15, 15) == std::vector<int>{0, 10, 12, 14});
    CHECK_THROWS(link_set(9, 0));
    CHECK_THROWS(link_set(9, 10));
}

TEST_CASE("link_set agrees with the divisor-enumeration oracle") {
    for (int n = 1; n <= 20; ++n)
        for (int k = 1; k <= n; ++k) {
            INFO("n=" << n << " k=" << k);
            CHECK(link_set(n, k) == link_oracle(n, k));
        }
}

TEST_CASE("link_set members precede k and always include k-1") {
    for (int n = 1; n <= 16; ++n)
        for (int k = 1; k <= n; ++k) {
            auto ls = link_set(n, k);
            for (int s : ls) {
                CHECK(s >= 0);
                CHECK(s < k);
            }
            CHECK(std::find(ls.begin(), ls.end(), k - 1) != ls.end());
        }
}

TEST_CASE("build_block with unit multiplier gives constant widths") {
    BlockGraph g = build_block(3, 16, 1.0, 10);
    REQUIRE(g.layers.size() == 3);
    for (const auto& L : g.layers) CHECK(L.out_channels == 16);
    // hand-expanded graph: links of n=3 are {1,3}
    CHECK(g.layers[0].inputs == std::vector<int>{0});      // layer 1 <- input
    CHECK(g.layers[0].in_channels == 10);
    CHECK(g.layers[1].inputs == std::vector<int>{1});      // layer 2 <- layer 1
    CHECK(g.layers[1].in_channels == 16);
    CHECK(g.layers[2].inputs == std::vector<int>{0, 2});   // layer 3 <- input, layer 2
    CHECK(g.layers[2].in_channels == 26);
    // output: odd layers + final = {1, 3}
    CHECK(g.output_layers == std::vector<int>{1, 3});
    CHECK(g.out_channels == 32);
}

TEST_CASE("build_block single layer consumes the block input") {
    BlockGraph g = build_block(1, 8, 1.7, 5);
    REQUIRE(g.layers.size() == 1);
    CHECK(g.layers[0].inputs == std::vector<int>{0});
    CHECK(g.layers[0].in_channels == 5);
    CHECK(g.output_layers == std::vector<int>{1});
}

TEST_CASE("depth-9 block wires layer 9 to layers 8, 6 and the input") {
    BlockGraph g = build_block(9, 14, 1.7, 32);
    CHECK(g.layers[8].inputs == std::vector<int>{0, 6, 8});
    CHECK(g.layers[8].in_channels ==
          32 + g.layers[5].out_channels + g.layers[7].out_channels);
    // widths follow growth * multiplier^outbound, rounded to even
    for (int k = 1; k <= 9; ++k) {
        int expect = round_even(14 * std::pow(1.7, outbound_links(9, k)));
        CHECK(g.layers[static_cast<size_t>(k - 1)].out_channels == expect);
        CHECK(g.layers[static_cast<size_t>(k - 1)].out_channels % 2 == 0);
    }
}

TEST_CASE("schedule_stats basics") {
    BlockSchedule s;
    s.blocks = {{9, 8, 1.7, 16, false}, {9, 8, 1.7, 16, false}, {9, 8, 1.7, 16, false}, {9, 8, 1.7, 16, false}};
    ScheduleStats st = schedule_stats(s);
    CHECK(st.mean == 9.0);
    CHECK(st.sd == 0.0);
}

TEST_CASE("schedule_stats of [3,9,15] matches the direct formula oracle") {
    BlockSchedule s;
    s.blocks = {{3, 8, 1.7, 16, false}, {9, 8, 1.7, 16, false}, {15, 8, 1.7, 16, false}};
    // population sd oracle: mean 9, sum of squares 72, sd = sqrt(72/3)
    CHECK_THAT(population_sd({3, 9, 15}), Catch::Matchers::WithinAbs(4.898979, 1e-5));
    // our documented convention is the sample one: sqrt(72/2) = 6
    CHECK_THAT(schedule_stats(s).sd, Catch::Matchers::WithinAbs(6.0, 1e-12));
}

TEST_CASE("shipped schedules reproduce the published layer amplitudes") {
    BlockSchedule dfus = load_schedule(std::string(CWS_SOURCE_DIR) + "/configs/schedule_dfus.json");
    BlockSchedule cws = load_schedule(std::string(CWS_SOURCE_DIR) + "/configs/schedule_cws.json");
    CHECK_THAT(schedule_stats(dfus).sd, Catch::Matchers::WithinAbs(4.2427, 1e-3));
    CHECK_THAT(schedule_stats(cws).sd, Catch::Matchers::WithinAbs(3.7149, 1e-3));

    // smoother harmonic pattern: CWS amplitude below DFUS under both conventions
    CHECK(schedule_stats(cws).sd < schedule_stats(dfus).sd);
    CHECK(population_sd(cws.layer_counts()) < population_sd(dfus.layer_counts()));

    // total layers increase while the first-four extremes soften
    int dfus_total = 0, cws_total = 0;
    for (int v : dfus.layer_counts()) dfus_total += v;
    for (int v : cws.layer_counts()) cws_total += v;
    CHECK(cws_total > dfus_total);
}

TEST_CASE("schedule validation rejects malformed configs") {
    BlockSchedule tiny;
    tiny.blocks = {{3, 8, 1.7, 16, false}};
    CHECK_THROWS(tiny.validate());

    nlohmann::json j;
    j["expected_layer_sd"] = 1.0;
    j["blocks"] = nlohmann::json::array();
    for (int i = 0; i < 4; ++i)
        j["blocks"].push_back({{"layers", 9}, {"growth", 8}, {"multiplier", 1.7}, {"out_channels", 16}});
    CHECK_THROWS(schedule_from_json(j));  // sd of a constant schedule is 0, not 1
}

TEST_CASE("encoder produces a stride 4/8/16/32 pyramid") {
    auto rng = make_rng(307);
    Encoder enc(5, StemConfig{8, 16}, toy_schedule(), rng);
    Var x = constant(randn(Shape{1, 5, 64, 64}, rng));
    Pyramid p = enc.forward(x, false);
    REQUIRE(p.levels.size() == 4);
    CHECK(p.strides == std::vector<int>{4, 8, 16, 32});
    CHECK(p.levels[0].shape()[2] == 16);
    CHECK(p.levels[1].shape()[2] == 8);
    CHECK(p.levels[2].shape()[2] == 4);
    CHECK(p.levels[3].shape()[2] == 2);
    auto ch = enc.pyramid_channels();
    for (size_t i = 0; i < 4; ++i) CHECK(p.levels[i].shape()[1] == ch[i]);
}

TEST_CASE("encoder accepts RGB input when the stem is built for 3 channels") {
    auto rng = make_rng(311);
    Encoder enc(3, StemConfig{8, 16}, toy_schedule(), rng);
    Var x = constant(randn(Shape{2, 3, 32, 32}, rng));
    Pyramid p = enc.forward(x, false);
    CHECK(p.levels.size() == 4);
}

TEST_CASE("encoder rejects indivisible spatial sizes with a clear message") {
    auto rng = make_rng(313);
    Encoder enc(3, StemConfig{8, 16}, toy_schedule(), rng);
    Var x = constant(randn(Shape{1, 3, 60, 64}, rng));
    CHECK_THROWS_WITH(enc.forward(x, false), Catch::Matchers::ContainsSubstring("not divisible"));
}

TEST_CASE("parameter count grows when a layer is added") {
    auto rng1 = make_rng(317);
    BlockSchedule full = toy_schedule();
    Encoder enc_full(4, StemConfig{8, 16}, full, rng1);

    BlockSchedule minus = full;
    minus.blocks[2].layers -= 1;
    auto rng2 = make_rng(317);
    Encoder enc_minus(4, StemConfig{8, 16}, minus, rng2);

    CHECK(enc_full.parameter_count() > enc_minus.parameter_count());
}

TEST_CASE("encoder forward is deterministic given fixed parameters") {
    auto rng = make_rng(331);
    Encoder enc(3, StemConfig{8, 16}, toy_schedule(), rng);
    Tensor xv = randn(Shape{1, 3, 32, 32}, rng);
    NoGradGuard g;
    Pyramid a = enc.forward(constant(xv), false);
    Pyramid b = enc.forward(constant(xv), false);
    for (size_t i = 0; i < a.levels.size(); ++i)
        for (int64_t j = 0; j < a.levels[i].numel(); ++j)
            CHECK(a.levels[i].value()[j] == b.levels[i].value()[j]);
}
