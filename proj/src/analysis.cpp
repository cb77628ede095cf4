#include "memtrain/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace memtrain {

ResourceCount count_resources(const ModelSpec& model, const CostModelConfig& cost) {
    ResourceCount rc;
    MapConfig mc;
    mc.tile_rows = cost.tile_rows;
    mc.tile_cols = cost.tile_cols;
    mc.g_min_us = 1.0;
    mc.g_max_us = 2.0;
    mc.weight_clip = 1.0; // geometry only

    const auto geoms = layer_geometry(model);
    for (size_t li = 0; li < geoms.size(); ++li) {
        const LayerGeom& g = geoms[li];
        TilingPlan plan = plan_tiling(g.fan_in, g.fan_out, mc, g.row_block);
        LayerResources lr;
        lr.node = g.node;
        lr.positions = g.positions;
        lr.tiles = plan.tiles();
        lr.copies = (li < cost.copies.size() && cost.copies[li] > 0) ? cost.copies[li] : 1;
        lr.weights = static_cast<long>(g.fan_in) * g.fan_out;
        for (const RowSlice& s : plan.row_slices)
            for (const ColGroup& c : plan.col_groups)
                lr.tile_dims.emplace_back(s.size(), 2 * c.size());

        rc.devices += 2 * lr.weights;
        rc.flops += 2ll * lr.weights * g.positions;
        rc.crossbars += lr.tiles;
        rc.ops += g.positions;
        rc.tile_ops += static_cast<long>(g.positions) * lr.tiles;
        rc.layers.push_back(std::move(lr));
    }

    // Copies: an array can carry two instances of the same tile when both
    // fit side by side (disjoint rows and columns; the idle cells sit at
    // g_min pairs and cancel in the dual-column subtraction).
    rc.crossbars_with_copies = rc.crossbars;
    for (const LayerResources& lr : rc.layers) {
        if (lr.copies <= 1) continue;
        int arrays = 0;
        for (const auto& [rows, cols] : lr.tile_dims) {
            const bool packable = 2 * rows <= cost.tile_rows && 2 * cols <= cost.tile_cols;
            arrays += packable ? (lr.copies + 1) / 2 : lr.copies;
        }
        rc.crossbars_with_copies += arrays - lr.tiles;
    }
    return rc;
}

CostReport energy_latency(const ModelSpec& model, const CostModelConfig& cost, int input_bits,
                          int weight_bits) {
    const ResourceCount rc = count_resources(model, cost);
    CostReport r;
    r.model = model.name;
    r.devices = rc.devices;
    r.flops = rc.flops;
    r.crossbars = rc.crossbars;
    r.crossbars_with_copies = rc.crossbars_with_copies;
    r.ops = rc.ops;
    r.tile_ops = rc.tile_ops;

    const double t_op_ms = cost.op_time_us() * 1e-3;
    r.latency_ms = rc.ops * t_op_ms;
    double slowest = 0.0, slowest_with_copies = 0.0;
    for (const LayerResources& lr : rc.layers) {
        slowest = std::max(slowest, lr.positions * t_op_ms);
        slowest_with_copies = std::max(slowest_with_copies, lr.positions * t_op_ms / lr.copies);
    }
    r.pipelined_ms = slowest;
    r.copies_ms = slowest_with_copies;
    r.energy_mj = rc.tile_ops * cost.e_tile_op_nj * 1e-6;
    auto [peak, norm] = tops_per_watt(cost, input_bits, weight_bits);
    r.peak_tops_w = peak;
    r.norm_tops_w = norm;
    return r;
}

std::pair<double, double> tops_per_watt(const CostModelConfig& cost, int input_bits,
                                        int weight_bits) {
    if (input_bits < 1 || weight_bits < 1) throw ConfigError("tops_per_watt: bit widths must be >= 1");
    // 2 MACs per device per op; energy per op in joules
    const double peak = 2.0 * cost.tile_rows * cost.tile_cols / (cost.e_tile_op_nj * 1e-9) / 1e12;
    return {peak, peak * input_bits * weight_bits};
}

std::string cost_report_csv_header() {
    return "model,devices,flops,crossbars,crossbars_with_copies,ops,tile_ops,latency_ms,"
           "latency_pipelined_ms,latency_with_copies_ms,energy_per_image_mj,peak_tops_per_w,"
           "normalized_tops_per_w";
}

std::string cost_report_csv_row(const CostReport& r) {
    char buf[512];
    std::snprintf(buf, sizeof(buf), "%s,%ld,%lld,%d,%d,%ld,%ld,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g",
                  r.model.c_str(), r.devices, r.flops, r.crossbars, r.crossbars_with_copies, r.ops,
                  r.tile_ops, r.latency_ms, r.pipelined_ms, r.copies_ms, r.energy_mj,
                  r.peak_tops_w, r.norm_tops_w);
    return buf;
}

void inject_transfer_noise(ParamSet& params, const ModelSpec& model, double sigma, double step,
                           double clip, Rng& rng) {
    if (sigma < 0.0) throw ConfigError("inject_transfer_noise: sigma must be >= 0");
    if (sigma == 0.0) return;
    for (const Node& n : model.nodes) {
        if (n.kind != OpKind::Conv && n.kind != OpKind::Fc) continue;
        Tensor& w = params[n.w];
        for (size_t i = 0; i < w.numel(); ++i) {
            double v = w[i] + rng.normal(0.0, sigma * step);
            w[i] = static_cast<float>(std::clamp(v, -clip, clip));
        }
    }
}

TransferSummary summarize(const std::string& model, double sigma,
                          const std::vector<double>& normalized) {
    if (normalized.empty()) throw DataError("summarize: no samples");
    std::vector<double> s = normalized;
    std::sort(s.begin(), s.end());
    auto q = [&](double p) {
        const double idx = p * (s.size() - 1);
        const size_t lo = static_cast<size_t>(std::floor(idx));
        const size_t hi = static_cast<size_t>(std::ceil(idx));
        const double f = idx - lo;
        return s[lo] * (1.0 - f) + s[hi] * f;
    };
    TransferSummary sum;
    sum.model = model;
    sum.sigma = sigma;
    sum.min = s.front();
    sum.q1 = q(0.25);
    sum.median = q(0.5);
    sum.q3 = q(0.75);
    sum.max = s.back();
    return sum;
}

double transfer_trial(const ModelSpec& model, const ParamSet& trained, const TrainerConfig& tcfg,
                      const DeviceConfig& dev_cfg, const TileConfig& tile_cfg,
                      const MapConfig& map_cfg, double sigma, int step_levels, const Tensor& test_x,
                      const std::vector<uint8_t>& test_y, int subset, uint64_t trial_seed) {
    if (step_levels < 2) throw ConfigError("transfer_trial: step_levels must be >= 2");
    TrainerConfig cfg = tcfg;
    cfg.mode = TrainMode::Mixed;
    cfg.init_from_devices = false;
    cfg.seed = trial_seed;
    TrainState st = make_state(model, cfg, dev_cfg, tile_cfg, map_cfg);

    // start from the trained weights
    for (int i = 0; i < st.params.size() && i < trained.size(); ++i)
        if (st.params[i].same_shape(trained[static_cast<size_t>(i)]))
            st.params[i] = trained[static_cast<size_t>(i)];

    Rng noise = st.root.sub(streams::kTransfer).rng();
    for (CimLayer& l : st.cim) {
        Tensor& w = st.params[l.w_param];
        // fresh mapping of a trained model: clip to the observed weight range
        if (map_cfg.weight_clip <= 0.0) {
            double mx = 0.0;
            for (size_t i = 0; i < w.numel(); ++i)
                mx = std::max(mx, std::abs(static_cast<double>(w[i])));
            l.mapping.weight_clip = mx > 0.0 ? mx : 1.0;
            l.mapping.map_cfg.weight_clip = l.mapping.weight_clip;
            l.mapping.scale =
                (l.mapping.map_cfg.g_max_us - l.mapping.map_cfg.g_min_us) / l.mapping.weight_clip;
        }
        const double clip = l.mapping.weight_clip;
        const double step = 2.0 * clip / (step_levels - 1);
        if (sigma > 0.0)
            for (size_t i = 0; i < w.numel(); ++i)
                w[i] = static_cast<float>(
                    std::clamp(static_cast<double>(w[i]) + noise.normal(0.0, sigma * step), -clip, clip));
        // fresh chip: the injected perturbation is the programming error model
        Rng prog = st.root.sub(streams::kTransfer, static_cast<uint64_t>(l.node)).rng();
        for (size_t i = 0; i < w.numel(); ++i)
            program_weight(l.mapping, st.dev_cfg, static_cast<int>(i) / l.mapping.fan_out,
                           static_cast<int>(i) % l.mapping.fan_out, w[i], prog,
                           /*ideal_program=*/true);
    }

    const int calib = std::min(64, test_x.dim(0));
    Tensor sample({calib, model.in_ch, model.in_h, model.in_w});
    std::copy(test_x.ptr(), test_x.ptr() + sample.numel(), sample.ptr());
    calibrate_act_scales(st, sample);

    EvalResult ev = evaluate(st, test_x, test_y, EvalMode::Cim, subset, trial_seed);
    return ev.accuracy;
}

} // namespace memtrain
