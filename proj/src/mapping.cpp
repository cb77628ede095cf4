#include "memtrain/mapping.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <json.hpp>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace memtrain {

PairedConductances weights_to_pairs(const Tensor& w, const MapConfig& cfg) {
    cfg.validate();
    PairedConductances out;
    out.scale = cfg.scale();
    out.shape = w.shape;
    out.g_pos.resize(w.numel());
    out.g_neg.resize(w.numel());
    const double clip = cfg.weight_clip;
    for (size_t i = 0; i < w.numel(); ++i) {
        const double wi = std::clamp(static_cast<double>(w[i]), -clip, clip);
        out.g_pos[i] = std::max(wi, 0.0) * out.scale + cfg.g_min_us;
        out.g_neg[i] = std::max(-wi, 0.0) * out.scale + cfg.g_min_us;
    }
    return out;
}

Tensor pairs_to_weights(const PairedConductances& pc, const MapConfig& cfg) {
    if (pc.g_pos.size() != pc.g_neg.size())
        throw DimensionMismatch("pairs_to_weights: column arrays differ in size");
    Tensor w(pc.shape);
    const double inv_scale = 1.0 / cfg.scale();
    for (size_t i = 0; i < w.numel(); ++i)
        w[i] = static_cast<float>((pc.g_pos[i] - pc.g_neg[i]) * inv_scale);
    return w;
}

Tensor pairs_to_weights(const Tensor& g_pos, const Tensor& g_neg, const MapConfig& cfg) {
    check_same_shape(g_pos, g_neg, "pairs_to_weights");
    Tensor w(g_pos.shape);
    const double inv_scale = 1.0 / cfg.scale();
    for (size_t i = 0; i < w.numel(); ++i)
        w[i] = static_cast<float>((static_cast<double>(g_pos[i]) - g_neg[i]) * inv_scale);
    return w;
}

int conv_out_dim(int n, int k, int stride, int pad) {
    const int span = n + 2 * pad - k;
    if (span < 0 || stride < 1) return 0;
    return span / stride + 1;
}

Tensor im2col(const Tensor& input, int k, int stride, int pad) {
    if (input.shape.size() != 3) throw GeometryError("im2col: input must be C x H x W");
    const int C = input.dim(0), H = input.dim(1), W = input.dim(2);
    const int OH = conv_out_dim(H, k, stride, pad);
    const int OW = conv_out_dim(W, k, stride, pad);
    if (OH < 1 || OW < 1) throw GeometryError("im2col: non-positive output dims");

    Tensor out({OH * OW, C * k * k});
    const float* src = input.ptr();
    float* dst = out.ptr();
    const int fan = C * k * k;
    for (int oy = 0; oy < OH; ++oy) {
        for (int ox = 0; ox < OW; ++ox) {
            float* row = dst + static_cast<size_t>(oy * OW + ox) * fan;
            for (int c = 0; c < C; ++c) {
                for (int ki = 0; ki < k; ++ki) {
                    const int iy = oy * stride - pad + ki;
                    for (int kj = 0; kj < k; ++kj) {
                        const int ix = ox * stride - pad + kj;
                        float v = 0.0f;
                        if (iy >= 0 && iy < H && ix >= 0 && ix < W)
                            v = src[(static_cast<size_t>(c) * H + iy) * W + ix];
                        row[(c * k + ki) * k + kj] = v;
                    }
                }
            }
        }
    }
    return out;
}

TilingPlan plan_tiling(int fan_in, int fan_out, const MapConfig& cfg, int row_block) {
    cfg.validate();
    if (fan_in < 1 || fan_out < 1) throw GeometryError("plan_tiling: empty layer");
    if (row_block < 1) throw GeometryError("plan_tiling: row_block must be >= 1");
    if (row_block > cfg.tile_rows)
        throw GeometryError("plan_tiling: receptive-field block of " + std::to_string(row_block) +
                            " rows does not fit a " + std::to_string(cfg.tile_rows) + "-row tile");
    if (fan_in % row_block != 0)
        throw GeometryError("plan_tiling: fan_in not a multiple of row_block");

    TilingPlan plan;
    const int rows_per_slice = (cfg.tile_rows / row_block) * row_block;
    for (int r = 0; r < fan_in; r += rows_per_slice)
        plan.row_slices.push_back({r, std::min(r + rows_per_slice, fan_in)});

    const int wcols = cfg.tile_cols / 2;
    for (int c = 0; c < fan_out; c += wcols)
        plan.col_groups.push_back({c, std::min(c + wcols, fan_out)});
    return plan;
}

namespace {

inline int round_up(int v, int m) { return ((v + m - 1) / m) * m; }

// Conductance pair for a single clipped weight.
inline void pair_targets(double w, const MapConfig& cfg, double scale, double clip,
                         double& gp, double& gn) {
    const double wc = std::clamp(w, -clip, clip);
    gp = std::max(wc, 0.0) * scale + cfg.g_min_us;
    gn = std::max(-wc, 0.0) * scale + cfg.g_min_us;
}

void program_cell(Tile& tile, int r, int c, double target, const DeviceConfig& dev_cfg,
                  Rng& rng, bool ideal, ProgramStats* stats) {
    DeviceState dev = tile.cell(r, c);
    if (ideal) {
        dev.g_us = target;
        dev.last_target_us = target;
        tile.set_cell(r, c, dev);
        if (stats) {
            stats->attempts += 1;
            stats->programmed += 1;
            stats->verified += 1;
        }
        return;
    }
    ProgramResult res = program(dev, target, dev_cfg, rng);
    tile.set_cell(r, c, dev);
    if (stats) {
        stats->attempts += res.trials_used;
        stats->programmed += 1;
        stats->verified += res.verified ? 1 : 0;
    }
}

} // namespace

LayerMapping map_layer(const Tensor& w, const MapConfig& map_cfg, const TileConfig& tile_cfg,
                       const DeviceConfig& dev_cfg, int row_block, StreamKey prog_key,
                       bool ideal_program, ProgramStats* stats) {
    if (w.shape.size() != 2) throw ShapeError("map_layer: weight matrix must be 2-D");
    LayerMapping m;
    m.map_cfg = map_cfg;
    m.tile_cfg = tile_cfg;
    m.fan_in = w.dim(0);
    m.fan_out = w.dim(1);

    // weight_clip freezes at first mapping so device targets stay stable.
    if (map_cfg.weight_clip > 0.0) {
        m.weight_clip = map_cfg.weight_clip;
    } else {
        double mx = 0.0;
        for (size_t i = 0; i < w.numel(); ++i) mx = std::max(mx, std::abs(static_cast<double>(w[i])));
        m.weight_clip = mx > 0.0 ? mx : 1.0;
        m.map_cfg.weight_clip = m.weight_clip;
    }
    m.scale = (map_cfg.g_max_us - map_cfg.g_min_us) / m.weight_clip;

    MapConfig plan_cfg = m.map_cfg;
    m.plan = plan_tiling(m.fan_in, m.fan_out, plan_cfg, row_block);

    const int n_groups = static_cast<int>(m.plan.col_groups.size());
    for (size_t s = 0; s < m.plan.row_slices.size(); ++s) {
        for (int gidx = 0; gidx < n_groups; ++gidx) {
            const RowSlice& slice = m.plan.row_slices[s];
            const ColGroup& grp = m.plan.col_groups[gidx];
            TileConfig tc = tile_cfg;
            tc.rows = slice.size();
            // Device columns round up to the shared-ADC group width; the pad
            // columns stay at g_min pairs and are never read out.
            tc.cols = round_up(2 * grp.size(), tile_cfg.group_size);
            Tile tile(tc);
            std::fill(tile.g_us.begin(), tile.g_us.end(), map_cfg.g_min_us);

            const int tidx = static_cast<int>(s) * n_groups + gidx;
            Rng prog_rng = prog_key.sub(static_cast<uint64_t>(tidx)).rng();
            for (int r = 0; r < slice.size(); ++r) {
                for (int j = 0; j < grp.size(); ++j) {
                    const double wv = w[static_cast<size_t>(slice.begin + r) * m.fan_out +
                                        (grp.begin + j)];
                    double gp, gn;
                    pair_targets(wv, m.map_cfg, m.scale, m.weight_clip, gp, gn);
                    program_cell(tile, r, LayerMapping::pos_col(j), gp, dev_cfg, prog_rng,
                                 ideal_program, stats);
                    program_cell(tile, r, LayerMapping::neg_col(j), gn, dev_cfg, prog_rng,
                                 ideal_program, stats);
                }
            }
            m.tiles.push_back(std::move(tile));
        }
    }
    m.alpha.assign(m.tiles.size(), 1.0);
    return m;
}

void program_weight(LayerMapping& m, const DeviceConfig& dev_cfg, int row, int col,
                    double w_value, Rng& prog_rng, bool ideal_program, ProgramStats* stats) {
    int sidx = -1;
    for (size_t s = 0; s < m.plan.row_slices.size(); ++s)
        if (row >= m.plan.row_slices[s].begin && row < m.plan.row_slices[s].end) {
            sidx = static_cast<int>(s);
            break;
        }
    int gidx = -1;
    for (size_t g = 0; g < m.plan.col_groups.size(); ++g)
        if (col >= m.plan.col_groups[g].begin && col < m.plan.col_groups[g].end) {
            gidx = static_cast<int>(g);
            break;
        }
    if (sidx < 0 || gidx < 0) throw RangeError("program_weight: index outside mapping");

    Tile& tile = m.tile_at(sidx, gidx);
    const int r = row - m.plan.row_slices[sidx].begin;
    const int j = col - m.plan.col_groups[gidx].begin;
    double gp, gn;
    pair_targets(w_value, m.map_cfg, m.scale, m.weight_clip, gp, gn);
    program_cell(tile, r, LayerMapping::pos_col(j), gp, dev_cfg, prog_rng, ideal_program, stats);
    program_cell(tile, r, LayerMapping::neg_col(j), gn, dev_cfg, prog_rng, ideal_program, stats);
}

Tensor read_weights(const LayerMapping& m) {
    Tensor w({m.fan_in, m.fan_out});
    const int n_groups = static_cast<int>(m.plan.col_groups.size());
    for (size_t s = 0; s < m.plan.row_slices.size(); ++s) {
        const RowSlice& slice = m.plan.row_slices[s];
        for (int g = 0; g < n_groups; ++g) {
            const ColGroup& grp = m.plan.col_groups[g];
            const Tile& tile = m.tile_at(static_cast<int>(s), g);
            for (int r = 0; r < slice.size(); ++r)
                for (int j = 0; j < grp.size(); ++j) {
                    const double gp = tile.g_at(r, LayerMapping::pos_col(j));
                    const double gn = tile.g_at(r, LayerMapping::neg_col(j));
                    w[static_cast<size_t>(slice.begin + r) * m.fan_out + grp.begin + j] =
                        static_cast<float>((gp - gn) / m.scale);
                }
        }
    }
    return w;
}

double dequant_gain(const LayerMapping& m, const DeviceConfig& dev_cfg, double act_scale) {
    const TileConfig& tc = m.tile_cfg;
    const double lsb = tc.adc_i_max_ua / tc.code_max();
    return act_scale * std::ldexp(1.0, tc.dac_bits) * lsb / (m.scale * dev_cfg.v_read_v);
}

namespace {

// tile_vmm with caller-owned scratch; avoids per-call allocation in the
// batched forward.
struct VmmScratch {
    std::vector<double> weighted;
    std::vector<double> cyc;
};

void tile_vmm_into(const Tile& tile, const DeviceConfig& dev_cfg, const uint16_t* inputs,
                   VmmMode mode, Rng& read_rng, Rng& adc_rng, VmmScratch& scratch,
                   int* codes_out) {
    const int rows = tile.rows();
    const int cols = tile.cols();
    const TileConfig& cfg = tile.config;
    scratch.weighted.assign(cols, 0.0);
    scratch.cyc.assign(cols, 0.0);
    double* __restrict weighted = scratch.weighted.data();
    double* __restrict cyc = scratch.cyc.data();
    const double* __restrict gbase = tile.g_us.data();

    double noise_var_scale = 0.0;
    const double v = dev_cfg.v_read_v;
    for (int b = 0; b < cfg.dac_bits; ++b) {
        int n_active = 0;
        std::fill(scratch.cyc.begin(), scratch.cyc.end(), 0.0);
        const uint16_t mask = static_cast<uint16_t>(1u << b);
        for (int r = 0; r < rows; ++r) {
            if (!(inputs[r] & mask)) continue;
            ++n_active;
            const double* __restrict gr = gbase + static_cast<size_t>(r) * cols;
            for (int c = 0; c < cols; ++c) cyc[c] += gr[c];
        }
        if (n_active == 0) continue;
        const double w = std::ldexp(1.0, b - cfg.dac_bits);
        for (int c = 0; c < cols; ++c) weighted[c] += w * cyc[c] * v;
        noise_var_scale += w * w * n_active;
    }

    const double code_scale = cfg.code_max() / cfg.adc_i_max_ua;
    if (mode == VmmMode::Noisy) {
        const double sigma_cell = dev_cfg.sigma_read * dev_cfg.level_separation_ua();
        const double sigma_read_total =
            sigma_cell > 0.0 ? sigma_cell * std::sqrt(noise_var_scale) : 0.0;
        for (int c = 0; c < cols; ++c) {
            double wsum = weighted[c];
            if (sigma_read_total > 0.0) wsum += read_rng.normal(0.0, sigma_read_total);
            if (cfg.sigma_adc_ua > 0.0) wsum += adc_rng.normal(0.0, cfg.sigma_adc_ua);
            long code = std::lround(wsum * code_scale);
            codes_out[c] = static_cast<int>(std::clamp(code, 0L, static_cast<long>(cfg.code_max())));
        }
    } else {
        for (int c = 0; c < cols; ++c) {
            long code = std::lround(weighted[c] * code_scale);
            codes_out[c] = static_cast<int>(std::clamp(code, 0L, static_cast<long>(cfg.code_max())));
        }
    }
}

} // namespace

Tensor cim_linear_forward(const LayerMapping& m, const DeviceConfig& dev_cfg,
                          const std::vector<uint16_t>& codes, int n, double act_scale,
                          VmmMode mode, StreamKey read_key, StreamKey adc_key, bool parallel,
                          std::vector<std::vector<int16_t>>* signed_sums) {
    if (static_cast<size_t>(n) * m.fan_in != codes.size())
        throw DimensionMismatch("cim_linear_forward: codes size " + std::to_string(codes.size()) +
                                " != n * fan_in");
    Tensor out({n, m.fan_out});
    const double base_gain = dequant_gain(m, dev_cfg, act_scale);
    const int n_groups = static_cast<int>(m.plan.col_groups.size());
    const int n_tiles = static_cast<int>(m.tiles.size());

    if (signed_sums) {
        signed_sums->assign(n_tiles,
                            std::vector<int16_t>());
    }

    for (int t = 0; t < n_tiles; ++t) {
        const int sidx = t / n_groups;
        const int gidx = t % n_groups;
        const RowSlice& slice = m.plan.row_slices[sidx];
        const ColGroup& grp = m.plan.col_groups[gidx];
        const Tile& tile = m.tiles[t];
        const double gain = m.alpha[t] * base_gain;
        std::vector<int16_t>* ss = nullptr;
        if (signed_sums) {
            (*signed_sums)[t].assign(static_cast<size_t>(n) * grp.size(), 0);
            ss = &(*signed_sums)[t];
        }
        const StreamKey tile_read = read_key.sub(static_cast<uint64_t>(t));
        const StreamKey tile_adc = adc_key.sub(static_cast<uint64_t>(t));

#pragma omp parallel for schedule(static) if (parallel)
        for (int i = 0; i < n; ++i) {
            static thread_local VmmScratch scratch;
            static thread_local std::vector<int> tile_codes;
            tile_codes.resize(static_cast<size_t>(tile.cols()));
            Rng read_rng = tile_read.sub(static_cast<uint64_t>(i)).rng();
            Rng adc_rng = tile_adc.sub(static_cast<uint64_t>(i)).rng();
            const uint16_t* in = codes.data() + static_cast<size_t>(i) * m.fan_in + slice.begin;
            tile_vmm_into(tile, dev_cfg, in, mode, read_rng, adc_rng, scratch, tile_codes.data());

            float* out_row = out.ptr() + static_cast<size_t>(i) * m.fan_out + grp.begin;
            for (int j = 0; j < grp.size(); ++j) {
                const int sc = tile_codes[LayerMapping::pos_col(j)] -
                               tile_codes[LayerMapping::neg_col(j)];
                out_row[j] += static_cast<float>(gain * sc);
                if (ss) (*ss)[static_cast<size_t>(i) * grp.size() + j] = static_cast<int16_t>(sc);
            }
        }
    }
    return out;
}

std::string mapping_manifest_json(const LayerMapping& m) {
    nlohmann::json j;
    j["fan_in"] = m.fan_in;
    j["fan_out"] = m.fan_out;
    j["weight_clip"] = m.weight_clip;
    j["scale_us_per_weight"] = m.scale;
    j["tile_rows"] = m.map_cfg.tile_rows;
    j["tile_cols"] = m.map_cfg.tile_cols;
    auto& slices = j["row_slices"] = nlohmann::json::array();
    for (const auto& s : m.plan.row_slices) slices.push_back({{"begin", s.begin}, {"end", s.end}});
    auto& groups = j["col_groups"] = nlohmann::json::array();
    for (const auto& g : m.plan.col_groups) groups.push_back({{"begin", g.begin}, {"end", g.end}});
    auto& cmap = j["col_map"] = nlohmann::json::array();
    for (const auto& g : m.plan.col_groups)
        for (int c = g.begin; c < g.end; ++c)
            cmap.push_back({{"weight_col", c},
                            {"pos", LayerMapping::pos_col(c - g.begin)},
                            {"neg", LayerMapping::neg_col(c - g.begin)}});
    j["alpha"] = m.alpha;
    return j.dump(2);
}

} // namespace memtrain
