#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "memtrain/dataset.hpp"
#include "memtrain/trainer.hpp"

using namespace memtrain;

namespace {

// Small LeNet-shaped problem on 12x12 synthetic digits for fast loops.
struct Fixture {
    ModelSpec model;
    TrainerConfig tcfg;
    DeviceConfig dev;
    TileConfig tile;
    MapConfig map;
    Tensor train_x, test_x;
    std::vector<uint8_t> train_y, test_y;

    explicit Fixture(uint64_t seed = 1, TrainMode mode = TrainMode::Mixed) {
        model.name = "tiny";
        model.in_ch = 1;
        model.in_h = 28;
        model.in_w = 28;
        model.classes = 10;
        Node c1;
        c1.kind = OpKind::Conv;
        c1.input = -1;
        c1.out_ch = 4;
        c1.k = 5;
        c1.stride = 2;
        c1.pad = 0;
        model.nodes.push_back(c1);
        Node r;
        r.kind = OpKind::Relu;
        r.input = 0;
        model.nodes.push_back(r);
        Node p;
        p.kind = OpKind::MaxPool;
        p.input = 1;
        p.pool_k = 2;
        p.pool_s = 2;
        model.nodes.push_back(p);
        Node f;
        f.kind = OpKind::Fc;
        f.input = 2;
        f.out_ch = 10;
        model.nodes.push_back(f);
        resolve_model(model);

        tcfg.mode = mode;
        tcfg.seed = seed;
        tcfg.batch_size = 8;
        tcfg.batches_per_epoch = 4;
        tcfg.max_epochs = 2;
        tcfg.lr = 0.01;
        tcfg.test_subset = 32;
        tcfg.init_lo_ua = 0.82;
        tcfg.init_hi_ua = 2.0;

        dev.i_min_ua = 0.82;
        dev.i_max_ua = 3.29;
        dev.v_read_v = 0.1;
        dev.n_levels = 4;
        dev.sigma_read = 0.3;
        dev.sigma_prog = 0.5;
        dev.verify_tol = 0.5;
        dev.max_trials = 2;

        tile.rows = 64;
        tile.cols = 64;
        tile.adc_i_max_ua = 70.0;
        tile.sigma_adc_ua = 0.549;

        map.g_min_us = dev.g_min_us();
        map.g_max_us = dev.g_max_us();
        map.weight_clip = 1.0;
        map.tile_rows = 64;
        map.tile_cols = 64;

        Dataset tr = synth_digits(64, 100 + seed);
        Dataset te = synth_digits(32, 999);
        train_x = tr.to_float();
        train_y = tr.labels;
        test_x = te.to_float();
        test_y = te.labels;
    }

    TrainState make() { return make_state(model, tcfg, dev, tile, map); }
};

} // namespace

TEST_SUITE("trainer") {

TEST_CASE("update threshold formula") {
    DeviceConfig d;
    d.n_levels = 16;
    MapConfig m;
    m.weight_clip = 1.0;
    CHECK(threshold_for(d, m) == doctest::Approx(2.0 / 15.0));
    d.n_levels = 4;
    CHECK(threshold_for(d, m) == doctest::Approx(2.0 / 3.0));
    d.n_levels = 2;
    CHECK(threshold_for(d, m) == doctest::Approx(2.0));
    m.weight_clip = 0.5;
    CHECK(threshold_for(d, m) == doctest::Approx(1.0));
}

TEST_CASE("device-initialized state reads W_FP out of the arrays") {
    Fixture fx;
    TrainState st = fx.make();
    REQUIRE(st.cim.size() == 2);
    for (const CimLayer& l : st.cim) {
        const Tensor readout = read_weights(l.mapping);
        const Tensor& w = st.params[l.w_param];
        for (size_t i = 0; i < w.numel(); ++i) CHECK(w[i] == doctest::Approx(readout[i]).epsilon(1e-6));
        // init window 0.82-2 uA at 0.1 V spans 8.2-20 uS; weight magnitudes stay below
        // (20 - 8.2) * scale^-1
        const double bound = (20.0 - 8.2) / l.mapping.scale + 1e-9;
        for (size_t i = 0; i < w.numel(); ++i) CHECK(std::abs(w[i]) <= bound);
    }
}

TEST_CASE("train_batch accumulates and leaves devices untouched") {
    Fixture fx;
    TrainState st = fx.make();
    std::vector<std::vector<double>> g_before;
    for (const auto& l : st.cim)
        for (const auto& t : l.mapping.tiles) g_before.push_back(t.g_us);

    Tensor x({fx.tcfg.batch_size, 1, 28, 28});
    std::vector<uint8_t> y(static_cast<size_t>(fx.tcfg.batch_size));
    std::copy(fx.train_x.ptr(), fx.train_x.ptr() + x.numel(), x.ptr());
    std::copy(fx.train_y.begin(), fx.train_y.begin() + fx.tcfg.batch_size, y.begin());

    const double loss = train_batch(st, x, y, 0);
    CHECK(loss > 0.0);

    size_t gi = 0;
    for (const auto& l : st.cim)
        for (const auto& t : l.mapping.tiles) CHECK(t.g_us == g_before[gi++]);

    // fresh accumulator equals the optimizer proposal of this single batch
    double acc_mag = 0.0;
    for (const auto& l : st.cim)
        for (size_t i = 0; i < l.dw_acc.numel(); ++i)
            acc_mag = std::max(acc_mag, std::abs(static_cast<double>(l.dw_acc[i])));
    CHECK(acc_mag > 0.0);
    CHECK(acc_mag <= 3.0 * fx.tcfg.lr); // AdamW single-step magnitude is at most ~lr plus decay
}

TEST_CASE("two identical batches accumulate additively") {
    Fixture fx;
    TrainState a = fx.make();
    TrainState b = fx.make();
    Tensor x({fx.tcfg.batch_size, 1, 28, 28});
    std::vector<uint8_t> y(static_cast<size_t>(fx.tcfg.batch_size));
    std::copy(fx.train_x.ptr(), fx.train_x.ptr() + x.numel(), x.ptr());
    std::copy(fx.train_y.begin(), fx.train_y.begin() + fx.tcfg.batch_size, y.begin());

    train_batch(a, x, y, 0);
    std::vector<Tensor> acc1;
    for (const auto& l : a.cim) acc1.push_back(l.dw_acc);
    train_batch(a, x, y, 1);

    // the second proposal lands on top of the first
    double second_mag = 0.0;
    for (size_t li = 0; li < a.cim.size(); ++li)
        for (size_t i = 0; i < acc1[li].numel(); ++i)
            second_mag = std::max(second_mag,
                                  std::abs(static_cast<double>(a.cim[li].dw_acc[i] - acc1[li][i])));
    CHECK(second_mag > 0.0);

    // and an identical replay reproduces the accumulator exactly
    train_batch(b, x, y, 0);
    train_batch(b, x, y, 1);
    for (size_t li = 0; li < a.cim.size(); ++li)
        for (size_t i = 0; i < acc1[li].numel(); ++i)
            CHECK(a.cim[li].dw_acc[i] == b.cim[li].dw_acc[i]);
}

TEST_CASE("thresholded apply: boundary, reset, counters and device writes") {
    Fixture fx;
    TrainState st = fx.make();
    CimLayer& l = st.cim[0];
    const double theta = l.theta;

    // manufacture an accumulator: one exactly at theta, one just below
    l.dw_acc.fill(0.0f);
    l.dw_acc[0] = static_cast<float>(theta);
    l.dw_acc[1] = static_cast<float>(theta * 0.999);
    for (auto& other : st.cim)
        if (&other != &l) other.dw_acc.fill(0.0f);
    st.params[l.w_param][0] = 0.1f; // keep w0 + theta inside the clip window
    const float w0_before = st.params[l.w_param][0];
    const float w1_before = st.params[l.w_param][1];

    const long n = apply_threshold_updates(st, 0);
    CHECK(n == 1);
    CHECK(l.dw_acc[0] == 0.0f);
    CHECK(l.dw_acc[1] == doctest::Approx(theta * 0.999));
    CHECK(st.params[l.w_param][0] == doctest::Approx(w0_before + theta).epsilon(1e-5));
    CHECK(st.params[l.w_param][1] == w1_before);
    CHECK(l.update_count[0] == 1);
    CHECK(l.update_count[1] == 0);
    // both devices of weight 0 were re-targeted to the new value
    const double expect_pos =
        (w0_before + theta) * l.mapping.scale + st.map_cfg.g_min_us;
    CHECK(l.mapping.tiles[0].last_target_us[0] == doctest::Approx(expect_pos).epsilon(1e-5));
    CHECK(l.mapping.tiles[0].last_target_us[1] == doctest::Approx(st.map_cfg.g_min_us));
}

TEST_CASE("conservation of intent across batches and applies") {
    Fixture fx;
    TrainState st = fx.make();
    const size_t nl = st.cim.size();
    std::vector<std::vector<double>> proposed(nl), applied(nl);
    for (size_t li = 0; li < nl; ++li) {
        proposed[li].assign(st.cim[li].dw_acc.numel(), 0.0);
        applied[li].assign(st.cim[li].dw_acc.numel(), 0.0);
    }

    Tensor x({fx.tcfg.batch_size, 1, 28, 28});
    std::vector<uint8_t> y(static_cast<size_t>(fx.tcfg.batch_size));
    for (int b = 0; b < 6; ++b) {
        const size_t off = static_cast<size_t>(b % 4) * x.numel();
        std::copy(fx.train_x.ptr() + off, fx.train_x.ptr() + off + x.numel(), x.ptr());
        std::copy(fx.train_y.begin() + (b % 4) * fx.tcfg.batch_size,
                  fx.train_y.begin() + (b % 4 + 1) * fx.tcfg.batch_size, y.begin());

        std::vector<Tensor> acc_before;
        for (const auto& l : st.cim) acc_before.push_back(l.dw_acc);
        train_batch(st, x, y, b);
        for (size_t li = 0; li < nl; ++li)
            for (size_t i = 0; i < proposed[li].size(); ++i)
                proposed[li][i] += st.cim[li].dw_acc[i] - acc_before[li][i];

        std::vector<Tensor> w_before;
        for (const auto& l : st.cim) w_before.push_back(st.params[l.w_param]);
        apply_threshold_updates(st, b);
        for (size_t li = 0; li < nl; ++li)
            for (size_t i = 0; i < applied[li].size(); ++i)
                applied[li][i] += st.params[st.cim[li].w_param][i] - w_before[li][i];
    }
    for (size_t li = 0; li < nl; ++li)
        for (size_t i = 0; i < proposed[li].size(); ++i)
            CHECK(applied[li][i] + st.cim[li].dw_acc[i] ==
                  doctest::Approx(proposed[li][i]).epsilon(1e-4));
}

TEST_CASE("W_FP stays inside the clip window and devices track verified weights") {
    Fixture fx;
    fx.tcfg.max_epochs = 1;
    fx.tcfg.batches_per_epoch = 8;
    TrainState st = fx.make();
    run_training(st, fx.train_x, fx.train_y, fx.test_x, fx.test_y);

    for (const CimLayer& l : st.cim) {
        const Tensor& w = st.params[l.w_param];
        const Tensor readout = read_weights(l.mapping);
        const double image = l.mapping.weight_clip > 0
                                 ? st.dev_cfg.sigma_prog * st.dev_cfg.level_separation_us() /
                                       l.mapping.scale
                                 : 0.0;
        for (size_t i = 0; i < w.numel(); ++i) {
            CHECK(std::abs(w[i]) <= l.mapping.weight_clip + 1e-6);
            if (l.update_count[i] > 0 && !l.unverified[i])
                CHECK(std::abs(w[i] - readout[i]) <= 3.0 * image + 1e-9);
        }
    }
}

TEST_CASE("zero deltas stop the loop after one epoch") {
    Fixture fx;
    fx.tcfg.lr = 0.0; // no proposals, no updates
    fx.tcfg.max_epochs = 5;
    TrainState st = fx.make();
    auto stats = run_training(st, fx.train_x, fx.train_y, fx.test_x, fx.test_y);
    REQUIRE(stats.size() == 1);
    CHECK(stats[0].weight_updates == 0);
}

TEST_CASE("max_epochs = 0 trains nothing") {
    Fixture fx;
    fx.tcfg.max_epochs = 0;
    TrainState st = fx.make();
    auto stats = run_training(st, fx.train_x, fx.train_y, fx.test_x, fx.test_y);
    CHECK(stats.empty());
}

TEST_CASE("naive mode programs every weight every batch") {
    Fixture fx(3, TrainMode::Naive);
    fx.tcfg.max_epochs = 1;
    fx.tcfg.batches_per_epoch = 3;
    TrainState st = fx.make();
    auto stats = run_training(st, fx.train_x, fx.train_y, fx.test_x, fx.test_y);
    REQUIRE(stats.size() == 1);
    CHECK(stats[0].weight_updates == 3 * st.n_cim_weights());
    for (const CimLayer& l : st.cim)
        for (uint32_t c : l.update_count) CHECK(c == 3);
}

TEST_CASE("software mode trains without any mappings") {
    Fixture fx(4, TrainMode::Software);
    fx.tcfg.max_epochs = 1;
    TrainState st = fx.make();
    CHECK(st.cim.empty());
    auto stats = run_training(st, fx.train_x, fx.train_y, fx.test_x, fx.test_y);
    REQUIRE(stats.size() == 1);
    CHECK(stats[0].weight_updates == 0);
    CHECK(stats[0].test_accuracy >= 0.0);
}

TEST_CASE("evaluate fills the confusion matrix consistently") {
    Fixture fx;
    TrainState st = fx.make();
    EvalResult ev = evaluate(st, fx.test_x, fx.test_y, EvalMode::Cim, 8, 1);
    CHECK(ev.samples == 8);
    long total = 0, diag = 0;
    for (int t = 0; t < 10; ++t)
        for (int p = 0; p < 10; ++p) {
            total += ev.confusion.at(t, p);
            if (t == p) diag += ev.confusion.at(t, p);
        }
    CHECK(total == 8);
    CHECK(ev.accuracy == doctest::Approx(static_cast<double>(diag) / 8));

    EvalResult again = evaluate(st, fx.test_x, fx.test_y, EvalMode::Cim, 8, 1);
    CHECK(again.accuracy == ev.accuracy); // same eval id, same noise
}

TEST_CASE("training runs are reproducible from the seed") {
    std::vector<double> acc;
    std::vector<long> updates;
    for (int rep = 0; rep < 2; ++rep) {
        Fixture fx(7);
        fx.tcfg.max_epochs = 1;
        TrainState st = fx.make();
        auto stats = run_training(st, fx.train_x, fx.train_y, fx.test_x, fx.test_y);
        acc.push_back(stats[0].test_accuracy);
        updates.push_back(stats[0].weight_updates);
    }
    CHECK(acc[0] == acc[1]);
    CHECK(updates[0] == updates[1]);
}

TEST_CASE("serial and parallel execution produce identical results") {
    std::vector<double> loss;
    for (bool par : {false, true}) {
        Fixture fx(8);
        fx.tcfg.parallel = par;
        TrainState st = fx.make();
        Tensor x({fx.tcfg.batch_size, 1, 28, 28});
        std::vector<uint8_t> y(static_cast<size_t>(fx.tcfg.batch_size));
        std::copy(fx.train_x.ptr(), fx.train_x.ptr() + x.numel(), x.ptr());
        std::copy(fx.train_y.begin(), fx.train_y.begin() + fx.tcfg.batch_size, y.begin());
        loss.push_back(train_batch(st, x, y, 0));
    }
    CHECK(loss[0] == loss[1]);
}

TEST_CASE("checkpoints restore training state exactly") {
    namespace fs = std::filesystem;
    const std::string dir = (fs::temp_directory_path() / "memtrain_trainer_ckpt").string();

    Fixture fx(9);
    fx.tcfg.max_epochs = 1;
    TrainState st = fx.make();
    run_training(st, fx.train_x, fx.train_y, fx.test_x, fx.test_y);
    save_checkpoint(st, dir);

    Fixture fresh(9);
    TrainState st2 = fresh.make();
    load_checkpoint(st2, dir);
    for (int i = 0; i < st.params.size(); ++i)
        for (size_t j = 0; j < st.params[i].numel(); ++j)
            CHECK(st2.params[i][j] == st.params[i][j]);
    for (size_t li = 0; li < st.cim.size(); ++li) {
        CHECK(st2.cim[li].act_scale == doctest::Approx(st.cim[li].act_scale));
        for (size_t t = 0; t < st.cim[li].mapping.tiles.size(); ++t)
            CHECK(st2.cim[li].mapping.tiles[t].g_us == st.cim[li].mapping.tiles[t].g_us);
        CHECK(st2.cim[li].update_count == st.cim[li].update_count);
    }
    CHECK(st2.opt.t == st.opt.t);
    CHECK(st2.epoch == st.epoch);
    fs::remove_all(dir);
}

} // TEST_SUITE
