#include <doctest.h>

#include <cmath>

#include "memtrain/analysis.hpp"
#include "memtrain/dataset.hpp"
#include "memtrain/metrics.hpp"

using namespace memtrain;

namespace {

CostModelConfig cost64() {
    CostModelConfig c;
    c.tile_rows = 64;
    c.tile_cols = 64;
    c.e_tile_op_nj = 2.66;
    return c;
}

CostModelConfig cost256() {
    CostModelConfig c;
    c.tile_rows = 256;
    c.tile_cols = 64;
    c.e_tile_op_nj = 2.93;
    return c;
}

double round_3sf(double v) {
    if (v == 0.0) return 0.0;
    const double mag = std::pow(10.0, std::floor(std::log10(std::abs(v))) - 2);
    return std::round(v / mag) * mag;
}

} // namespace

TEST_SUITE("analysis") {

TEST_CASE("single 1x1 layer resource counts") {
    ModelSpec m;
    m.name = "unit";
    m.in_ch = 1;
    m.in_h = 1;
    m.in_w = 1;
    m.classes = 1;
    Node f;
    f.kind = OpKind::Fc;
    f.input = -1;
    f.out_ch = 1;
    m.nodes.push_back(f);
    resolve_model(m);

    ResourceCount rc = count_resources(m, cost64());
    CHECK(rc.devices == 2);
    CHECK(rc.crossbars == 1);
    CHECK(rc.ops == 1);
    CHECK(rc.tile_ops == 1);
}

TEST_CASE("lenet resource counts") {
    CostModelConfig c = cost64();
    c.copies = {8};
    ResourceCount rc = count_resources(build_lenet(), c);
    CHECK(rc.ops == 641);       // 576 + 64 + 1
    CHECK(rc.tile_ops == 707);  // 576 + 2*64 + 3
    CHECK(rc.crossbars == 6);   // 1 + 2 + 3
    CHECK(rc.crossbars_with_copies == 9); // 8 conv1 copies pack pairwise into 4 arrays
    CHECK(rc.devices == 6160);
    CHECK(rc.flops == 397440);
}

TEST_CASE("vgg8 resource counts") {
    CostModelConfig c = cost256();
    c.copies = {4, 4};
    ResourceCount rc = count_resources(build_vgg8(), c);
    CHECK(rc.devices == 1099968);
    CHECK(rc.flops == 77793792);
    CHECK(rc.crossbars == 78);
    CHECK(rc.ops == 2690);
    CHECK(rc.tile_ops == 7713);
    CHECK(rc.crossbars_with_copies == 87);
}

TEST_CASE("resnet18 resource counts") {
    CostModelConfig c = cost256();
    c.copies = {4, 4, 4, 4, 4};
    ResourceCount rc = count_resources(build_resnet18(), c);
    CHECK(rc.devices == 22328704);
    CHECK(rc.flops == 1110845440ll);
    CHECK(rc.crossbars == 1480);
    CHECK(rc.ops == 6801);
    CHECK(rc.tile_ops == 81922);
    CHECK(rc.crossbars_with_copies == 1558);
}

TEST_CASE("energy and latency variants") {
    CostModelConfig c = cost64();
    c.copies = {8};
    CostReport r = energy_latency(build_lenet(), c);
    CHECK(c.op_time_us() == doctest::Approx(0.72));
    CHECK(r.latency_ms == doctest::Approx(641 * 0.72e-3).epsilon(1e-9));
    CHECK(r.pipelined_ms == doctest::Approx(576 * 0.72e-3).epsilon(1e-9));
    CHECK(r.copies_ms == doctest::Approx(72 * 0.72e-3).epsilon(1e-9));
    CHECK(r.energy_mj == doctest::Approx(707 * 2.66e-6).epsilon(1e-9));

    SUBCASE("invariant ordering") {
        CHECK(r.copies_ms <= r.pipelined_ms);
        CHECK(r.pipelined_ms <= r.latency_ms);
    }
    SUBCASE("energy does not depend on the copy plan") {
        CostModelConfig plain = cost64();
        CostReport r2 = energy_latency(build_lenet(), plain);
        CHECK(r2.energy_mj == r.energy_mj);
        CHECK(r2.latency_ms == r.latency_ms);
    }
    SUBCASE("more copies never slow the pipeline or shrink the array count") {
        CostModelConfig more = cost64();
        more.copies = {16};
        CostReport r3 = energy_latency(build_lenet(), more);
        CHECK(r3.copies_ms <= r.copies_ms);
        CHECK(r3.crossbars_with_copies >= r.crossbars_with_copies);
    }
}

TEST_CASE("tops per watt") {
    CostModelConfig c = cost64();
    auto [peak, norm] = tops_per_watt(c, 8, 4);
    CHECK(round_3sf(peak) == doctest::Approx(3.08));
    CHECK(round_3sf(norm) == doctest::Approx(98.6));
    auto [p1, n1] = tops_per_watt(c, 1, 1);
    CHECK(p1 == n1);
    CHECK_THROWS_AS(tops_per_watt(c, 0, 4), ConfigError);
}

TEST_CASE("cost report CSV shape") {
    CostReport r = energy_latency(build_lenet(), cost64());
    const std::string header = cost_report_csv_header();
    const std::string row = cost_report_csv_row(r);
    CHECK(std::count(header.begin(), header.end(), ',') ==
          std::count(row.begin(), row.end(), ','));
    CHECK(row.substr(0, 5) == "lenet");
}

TEST_CASE("transfer noise injection") {
    ModelSpec m = build_lenet();
    ParamSet p = init_params(m, root_key(60));

    SUBCASE("sigma zero is the identity") {
        ParamSet q = p;
        Rng rng = root_key(61).rng();
        inject_transfer_noise(q, m, 0.0, 0.1, 1.0, rng);
        for (int i = 0; i < p.size(); ++i)
            for (size_t j = 0; j < p[i].numel(); ++j) CHECK(q[i][j] == p[i][j]);
    }
    SUBCASE("perturbation std matches sigma * step") {
        ParamSet q = p;
        // avoid clipping so the sample std is clean
        for (const Node& n : m.nodes)
            if (n.kind == OpKind::Conv || n.kind == OpKind::Fc) q[n.w].fill(0.0f);
        Rng rng = root_key(62).rng();
        const double sigma = 0.5, step = 2.0 / 15.0;
        inject_transfer_noise(q, m, sigma, step, 10.0, rng);
        double s = 0.0, s2 = 0.0;
        long cnt = 0;
        for (const Node& n : m.nodes) {
            if (n.kind != OpKind::Conv && n.kind != OpKind::Fc) continue;
            for (size_t j = 0; j < q[n.w].numel(); ++j) {
                s += q[n.w][j];
                s2 += static_cast<double>(q[n.w][j]) * q[n.w][j];
                ++cnt;
            }
        }
        const double mean = s / cnt;
        const double std = std::sqrt(s2 / cnt - mean * mean);
        CHECK(std == doctest::Approx(sigma * step).epsilon(0.05));
    }
}

TEST_CASE("quartile summary") {
    std::vector<double> v{0.9, 0.5, 0.7, 0.6, 0.8};
    TransferSummary s = summarize("m", 0.5, v);
    CHECK(s.min == 0.5);
    CHECK(s.max == 0.9);
    CHECK(s.median == doctest::Approx(0.7));
    CHECK(s.q1 == doctest::Approx(0.6));
    CHECK(s.q3 == doctest::Approx(0.8));
    CHECK_THROWS_AS(summarize("m", 0.5, {}), DataError);
}

TEST_CASE("transfer trials are reproducible and sigma-zero keeps accuracy") {
    // tiny model to keep the CIM evaluation cheap
    ModelSpec m;
    m.name = "t";
    m.in_ch = 1;
    m.in_h = 28;
    m.in_w = 28;
    m.classes = 10;
    Node c;
    c.kind = OpKind::Conv;
    c.input = -1;
    c.out_ch = 2;
    c.k = 7;
    c.stride = 3;
    c.pad = 0;
    m.nodes.push_back(c);
    Node r;
    r.kind = OpKind::Relu;
    r.input = 0;
    m.nodes.push_back(r);
    Node f;
    f.kind = OpKind::Fc;
    f.input = 1;
    f.out_ch = 10;
    m.nodes.push_back(f);
    resolve_model(m);
    ParamSet p = init_params(m, root_key(63));

    TrainerConfig tcfg;
    tcfg.seed = 1;
    DeviceConfig dev;
    dev.i_min_ua = 1.0;
    dev.i_max_ua = 7.0;
    dev.n_levels = 16;
    TileConfig tile;
    tile.sigma_adc_ua = 0.549;
    MapConfig map;
    map.g_min_us = dev.g_min_us();
    map.g_max_us = dev.g_max_us();
    map.weight_clip = 1.0;
    map.tile_rows = tile.rows;
    map.tile_cols = tile.cols;

    Dataset te = synth_digits(64, 7);
    Tensor tx = te.to_float();

    const double a1 = transfer_trial(m, p, tcfg, dev, tile, map, 0.5, 16, tx, te.labels, 64, 5);
    const double a2 = transfer_trial(m, p, tcfg, dev, tile, map, 0.5, 16, tx, te.labels, 64, 5);
    CHECK(a1 == a2);
    const double a3 = transfer_trial(m, p, tcfg, dev, tile, map, 0.5, 16, tx, te.labels, 64, 6);
    (void)a3; // different trial seed may move accuracy; only determinism is asserted
}

} // TEST_SUITE
