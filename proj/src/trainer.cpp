#include "memtrain/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace memtrain {

double threshold_for(const DeviceConfig& dev_cfg, const MapConfig& map_cfg) {
    return 2.0 * map_cfg.weight_clip / (dev_cfg.n_levels - 1);
}

namespace {

// Randomize the used device pairs of a freshly built mapping (device-first
// initialization: conductances are drawn, then read out into W_FP).
void init_mapping_devices(LayerMapping& m, const DeviceConfig& dev_cfg, double lo_ua,
                          double hi_ua, StreamKey key) {
    const int n_groups = static_cast<int>(m.plan.col_groups.size());
    for (size_t t = 0; t < m.tiles.size(); ++t) {
        Tile& tile = m.tiles[t];
        const RowSlice& slice = m.plan.row_slices[t / n_groups];
        const ColGroup& grp = m.plan.col_groups[t % n_groups];
        Rng rng = key.sub(t).rng();
        for (int r = 0; r < slice.size(); ++r)
            for (int j = 0; j < grp.size(); ++j) {
                DeviceState pos = init_device(dev_cfg, lo_ua, hi_ua, rng);
                DeviceState neg = init_device(dev_cfg, lo_ua, hi_ua, rng);
                tile.set_cell(r, LayerMapping::pos_col(j), pos);
                tile.set_cell(r, LayerMapping::neg_col(j), neg);
            }
    }
}

struct NodeCim {
    CimLayer* layer = nullptr;
    std::vector<std::vector<int16_t>> ss; // per tile signed code sums
    double base_gain = 0.0;
};

// Routes the linear ops of forward() through the mapped crossbars.
class CimExec : public LinearExec {
public:
    CimExec(TrainState& st, VmmMode mode, StreamKey read_key, StreamKey adc_key, bool training)
        : st_(st), mode_(mode), read_key_(read_key), adc_key_(adc_key), training_(training) {
        by_node_.assign(st.model.nodes.size(), nullptr);
        node_cim_.resize(st.model.nodes.size());
        for (auto& l : st.cim) by_node_[static_cast<size_t>(l.node)] = &l;
    }

    bool preprocess(int node, const Tensor& x, Tensor& x_eff) override {
        CimLayer* l = by_node_[static_cast<size_t>(node)];
        if (!l) throw StateError("CIM forward hit an unmapped linear node");
        double mx = 0.0;
        for (size_t i = 0; i < x.numel(); ++i) mx = std::max(mx, static_cast<double>(x[i]));
        const int cmax = st_.tile_cfg.input_max();
        if (l->act_scale == 0.0) {
            l->act_scale = (mx > 0.0 ? mx : 1.0) / cmax;
        } else if (training_ && mx > l->act_scale * cmax) {
            l->act_scale = mx / cmax; // running-max recalibration
        }
        const double inv = 1.0 / l->act_scale;
        x_eff = Tensor(x.shape);
        for (size_t i = 0; i < x.numel(); ++i) {
            long code = std::lround(std::max(0.0f, x[i]) * inv);
            code = std::min(code, static_cast<long>(cmax));
            x_eff[i] = static_cast<float>(code * l->act_scale);
        }
        return true;
    }

    Tensor run(int node, const Tensor& rows) override {
        CimLayer* l = by_node_[static_cast<size_t>(node)];
        NodeCim& nc = node_cim_[static_cast<size_t>(node)];
        nc.layer = l;
        const int n_rows = rows.dim(0);
        const int cmax = st_.tile_cfg.input_max();
        std::vector<uint16_t> codes(rows.numel());
        const double inv = 1.0 / l->act_scale;
        for (size_t i = 0; i < rows.numel(); ++i) {
            long c = std::lround(static_cast<double>(rows[i]) * inv);
            codes[i] = static_cast<uint16_t>(std::clamp(c, 0L, static_cast<long>(cmax)));
        }
        // alpha lives in the parameter set; mirror into the mapping
        const Tensor& alpha = st_.params[l->alpha_param];
        for (size_t t = 0; t < l->mapping.alpha.size(); ++t)
            l->mapping.alpha[t] = alpha[t];
        nc.base_gain = dequant_gain(l->mapping, st_.dev_cfg, l->act_scale);
        return cim_linear_forward(l->mapping, st_.dev_cfg, codes, n_rows, l->act_scale, mode_,
                                  read_key_.sub(static_cast<uint64_t>(node)),
                                  adc_key_.sub(static_cast<uint64_t>(node)), st_.cfg.parallel,
                                  &nc.ss);
    }

    const Tensor& backward_weight(int node) override {
        return st_.params[by_node_[static_cast<size_t>(node)]->w_param];
    }

    const NodeCim& node_cim(int node) const { return node_cim_[static_cast<size_t>(node)]; }
    CimLayer* layer_of(int node) const { return by_node_[static_cast<size_t>(node)]; }

private:
    TrainState& st_;
    VmmMode mode_;
    StreamKey read_key_, adc_key_;
    bool training_;
    std::vector<CimLayer*> by_node_;
    std::vector<NodeCim> node_cim_;
};

void route_deltas(TrainState& st, const std::vector<Tensor>& deltas) {
    std::vector<int> w_to_cim(st.params.size(), -1);
    for (size_t i = 0; i < st.cim.size(); ++i) w_to_cim[static_cast<size_t>(st.cim[i].w_param)] = static_cast<int>(i);

    for (int p = 0; p < st.params.size(); ++p) {
        if (deltas[static_cast<size_t>(p)].numel() == 0) continue;
        const Tensor& d = deltas[static_cast<size_t>(p)];
        const int ci = w_to_cim[static_cast<size_t>(p)];
        if (ci >= 0 && st.cfg.mode == TrainMode::Mixed) {
            // accumulate the proposed update; the devices wait for the threshold
            Tensor& acc = st.cim[static_cast<size_t>(ci)].dw_acc;
            for (size_t j = 0; j < d.numel(); ++j) acc[j] += d[j];
        } else if (ci >= 0 && st.cfg.mode == TrainMode::Naive) {
            // direct update of the digital copy; programming follows per batch
            Tensor& w = st.params[p];
            const double clip = st.cim[static_cast<size_t>(ci)].mapping.weight_clip;
            for (size_t j = 0; j < d.numel(); ++j)
                w[j] = static_cast<float>(std::clamp(static_cast<double>(w[j]) + d[j], -clip, clip));
        } else {
            Tensor& w = st.params[p];
            for (size_t j = 0; j < d.numel(); ++j) w[j] += d[j];
        }
    }
    // scale factors stay positive
    for (auto& l : st.cim) {
        Tensor& a = st.params[l.alpha_param];
        for (size_t j = 0; j < a.numel(); ++j) a[j] = std::max(a[j], 1e-6f);
    }
}

} // namespace

TrainState make_state(const ModelSpec& model, const TrainerConfig& cfg,
                      const DeviceConfig& dev_cfg, const TileConfig& tile_cfg,
                      const MapConfig& map_cfg) {
    dev_cfg.validate();
    tile_cfg.validate();
    TrainState st;
    st.model = model;
    st.cfg = cfg;
    st.dev_cfg = dev_cfg;
    st.tile_cfg = tile_cfg;
    st.map_cfg = map_cfg;
    st.root = root_key(cfg.seed);
    st.params = init_params(model, st.root);
    st.opt.lr = cfg.lr;
    st.opt.weight_decay = cfg.weight_decay;
    st.sched.patience = cfg.patience;
    st.sched.factor = cfg.lr_factor;

    if (cfg.mode == TrainMode::Software || cfg.mode == TrainMode::Qat) return st;

    MapConfig layer_cfg = map_cfg;
    layer_cfg.tile_rows = tile_cfg.rows;
    layer_cfg.tile_cols = tile_cfg.cols;

    const auto geoms = layer_geometry(model);
    for (const LayerGeom& g : geoms) {
        CimLayer layer;
        layer.node = g.node;
        layer.w_param = model.nodes[static_cast<size_t>(g.node)].w;
        Tensor& w = st.params[layer.w_param];

        StreamKey lkey = st.root.sub(streams::kInit, static_cast<uint64_t>(g.node));
        if (cfg.init_from_devices) {
            Tensor zeros(w.shape);
            MapConfig mc = layer_cfg;
            if (mc.weight_clip <= 0.0) {
                // Scale the conductance readout to the network: the initial
                // window maps onto a fan-in bound so early activations stay
                // comparable across layers.
                const double bound = std::sqrt(6.0 / g.fan_in);
                const double init_width_us =
                    (cfg.init_hi_ua - cfg.init_lo_ua) / dev_cfg.v_read_v;
                mc.weight_clip = init_width_us > 0.0
                                     ? bound * (mc.g_max_us - mc.g_min_us) / init_width_us
                                     : 1.0;
            }
            layer.mapping = map_layer(zeros, mc, tile_cfg, dev_cfg, g.row_block, lkey,
                                      /*ideal_program=*/true);
            init_mapping_devices(layer.mapping, dev_cfg, cfg.init_lo_ua, cfg.init_hi_ua,
                                 lkey.sub(1));
            // the digital copy starts as a noiseless readout of the arrays
            w = read_weights(layer.mapping);
        } else {
            ProgramStats stats;
            layer.mapping = map_layer(w, layer_cfg, tile_cfg, dev_cfg, g.row_block, lkey,
                                      /*ideal_program=*/false, &stats);
        }

        MapConfig eff = layer.mapping.map_cfg;
        DeviceConfig quantum = dev_cfg;
        if (cfg.granularity_levels >= 2) quantum.n_levels = cfg.granularity_levels;
        layer.theta = threshold_for(quantum, eff);
        layer.dw_acc = Tensor(w.shape);
        layer.update_count.assign(w.numel(), 0);
        layer.unverified.assign(w.numel(), 0);
        layer.alpha_param = st.params.add(
            "node" + std::to_string(g.node) + ".alpha",
            Tensor({static_cast<int>(layer.mapping.tiles.size())}, 1.0f), cfg.train_alpha);
        st.cim.push_back(std::move(layer));
    }
    return st;
}

double train_batch(TrainState& st, const Tensor& x, const std::vector<uint8_t>& labels,
                   int batch_index) {
    const uint64_t e = static_cast<uint64_t>(st.epoch);
    const uint64_t b = static_cast<uint64_t>(batch_index);

    BatchCache cache;
    Gradients grads;
    Tensor logits, dlogits;
    double loss = 0.0;

    if (st.cfg.mode == TrainMode::Software || st.cfg.mode == TrainMode::Qat) {
        RefExec exec(st.model, st.params, st.cfg.mode == TrainMode::Qat, st.cfg.qat_levels);
        logits = forward(st.model, st.params, x, exec, cache, true);
        loss = cross_entropy_batch(logits, labels, dlogits);
        backward(st.model, st.params, cache, x, dlogits, exec, grads);
    } else {
        CimExec exec(st, VmmMode::Noisy, st.root.sub(streams::kReadNoise, e, b),
                     st.root.sub(streams::kAdcNoise, e, b), true);
        logits = forward(st.model, st.params, x, exec, cache, true);
        loss = cross_entropy_batch(logits, labels, dlogits);
        auto alpha_hook = [&](int node, const Tensor& drows) {
            CimLayer* l = exec.layer_of(node);
            if (!l || !st.cfg.train_alpha) return;
            const NodeCim& nc = exec.node_cim(node);
            Tensor& ag = grads.g[static_cast<size_t>(l->alpha_param)];
            const int out = l->mapping.fan_out;
            const int n_rows = drows.dim(0);
            const int n_groups = static_cast<int>(l->mapping.plan.col_groups.size());
            for (size_t t = 0; t < l->mapping.tiles.size(); ++t) {
                const ColGroup& grp = l->mapping.plan.col_groups[t % n_groups];
                const auto& ss = nc.ss[t];
                const int gw = grp.size();
                double acc = 0.0;
                for (int r = 0; r < n_rows; ++r) {
                    const float* dr = drows.ptr() + static_cast<size_t>(r) * out + grp.begin;
                    const int16_t* sr = ss.data() + static_cast<size_t>(r) * gw;
                    for (int j = 0; j < gw; ++j) acc += static_cast<double>(dr[j]) * sr[j];
                }
                ag[t] += static_cast<float>(nc.base_gain * acc);
            }
        };
        backward(st.model, st.params, cache, x, dlogits, exec, grads, alpha_hook);
    }

    auto deltas = st.opt.step(st.params, grads.g);
    route_deltas(st, deltas);
    st.total_batches += 1;
    return loss;
}

long apply_threshold_updates(TrainState& st, int batch_index) {
    Rng prog = st.root
                   .sub(streams::kProgNoise, static_cast<uint64_t>(st.epoch),
                        static_cast<uint64_t>(batch_index))
                   .rng();
    long count = 0;
    for (CimLayer& l : st.cim) {
        Tensor& w = st.params[l.w_param];
        float* acc = l.dw_acc.ptr();
        const double clip = l.mapping.weight_clip;
        const int fan_out = l.mapping.fan_out;
        for (size_t i = 0; i < l.dw_acc.numel(); ++i) {
            if (std::abs(static_cast<double>(acc[i])) < l.theta) continue;
            const double w_new = std::clamp(static_cast<double>(w[i]) + acc[i], -clip, clip);
            ProgramStats s;
            program_weight(l.mapping, st.dev_cfg, static_cast<int>(i) / fan_out,
                           static_cast<int>(i) % fan_out, w_new, prog, false, &s);
            // the digital copy takes the theoretical value even if unverified
            w[i] = static_cast<float>(w_new);
            acc[i] = 0.0f;
            l.update_count[i] += 1;
            l.unverified[i] = (s.verified == s.programmed) ? 0 : 1;
            l.prog_attempts += s.attempts;
            l.prog_programmed += s.programmed;
            l.prog_verified += s.verified;
            ++count;
        }
    }
    st.total_updates += count;
    return count;
}

long apply_naive_updates(TrainState& st, int batch_index) {
    Rng prog = st.root
                   .sub(streams::kProgNoise, static_cast<uint64_t>(st.epoch),
                        static_cast<uint64_t>(batch_index))
                   .rng();
    long count = 0;
    for (CimLayer& l : st.cim) {
        Tensor& w = st.params[l.w_param];
        const int fan_out = l.mapping.fan_out;
        for (size_t i = 0; i < w.numel(); ++i) {
            ProgramStats s;
            program_weight(l.mapping, st.dev_cfg, static_cast<int>(i) / fan_out,
                           static_cast<int>(i) % fan_out, w[i], prog, false, &s);
            l.update_count[i] += 1;
            l.unverified[i] = (s.verified == s.programmed) ? 0 : 1;
            l.prog_attempts += s.attempts;
            l.prog_programmed += s.programmed;
            l.prog_verified += s.verified;
            ++count;
        }
    }
    st.total_updates += count;
    return count;
}

EvalResult evaluate(TrainState& st, const Tensor& images, const std::vector<uint8_t>& labels,
                    EvalMode mode, int subset, uint64_t eval_id) {
    if (images.dim(0) == 0) throw DataError("evaluate: empty dataset");
    const int total = images.dim(0);
    const int n = (subset > 0 && subset < total) ? subset : total;
    const int chunk = 256;
    const int classes = st.model.classes;
    EvalResult res;
    res.confusion = ConfusionMatrix(classes);
    res.samples = n;
    long correct = 0;

    const size_t sample_sz = images.numel() / static_cast<size_t>(total);
    for (int off = 0, ci = 0; off < n; off += chunk, ++ci) {
        const int bs = std::min(chunk, n - off);
        Tensor x({bs, st.model.in_ch, st.model.in_h, st.model.in_w});
        std::memcpy(x.ptr(), images.ptr() + static_cast<size_t>(off) * sample_sz,
                    sizeof(float) * static_cast<size_t>(bs) * sample_sz);
        BatchCache cache;
        Tensor logits;
        if (mode == EvalMode::Reference) {
            RefExec exec(st.model, st.params);
            logits = forward(st.model, st.params, x, exec, cache, false);
        } else {
            CimExec exec(st,
                         mode == EvalMode::Cim ? VmmMode::Noisy : VmmMode::Ideal,
                         st.root.sub(streams::kEval, eval_id, static_cast<uint64_t>(ci)),
                         st.root.sub(streams::kEval, eval_id, static_cast<uint64_t>(ci) + 0x10000),
                         false);
            logits = forward(st.model, st.params, x, exec, cache, false);
        }
        for (int i = 0; i < bs; ++i) {
            const float* row = logits.ptr() + static_cast<size_t>(i) * classes;
            int arg = 0;
            for (int c = 1; c < classes; ++c)
                if (row[c] > row[arg]) arg = c;
            const int truth = labels[static_cast<size_t>(off + i)];
            res.confusion.at(truth, arg) += 1;
            if (arg == truth) ++correct;
        }
    }
    res.accuracy = static_cast<double>(correct) / n;
    return res;
}

void calibrate_act_scales(TrainState& st, const Tensor& sample) {
    if (st.cim.empty()) return;
    RefExec exec(st.model, st.params);
    BatchCache cache;
    forward(st.model, st.params, sample, exec, cache, false);
    const int cmax = st.tile_cfg.input_max();
    for (CimLayer& l : st.cim) {
        const Node& nd = st.model.nodes[static_cast<size_t>(l.node)];
        const Tensor& in = nd.input < 0 ? sample : cache.out[nd.input];
        double mx = 0.0;
        for (size_t i = 0; i < in.numel(); ++i) mx = std::max(mx, static_cast<double>(in[i]));
        l.act_scale = (mx > 0.0 ? mx : 1.0) / cmax;
    }
}

namespace {

void next_batch(TrainState& st, const Tensor& train_x, const std::vector<uint8_t>& train_y,
                Tensor& x, std::vector<uint8_t>& y) {
    const int total = train_x.dim(0);
    const size_t sample_sz = train_x.numel() / static_cast<size_t>(total);
    const int bs = st.cfg.batch_size;
    x = Tensor({bs, st.model.in_ch, st.model.in_h, st.model.in_w});
    y.resize(static_cast<size_t>(bs));
    for (int i = 0; i < bs; ++i) {
        if (st.perm_pos >= st.perm.size()) {
            st.perm.resize(static_cast<size_t>(total));
            for (int j = 0; j < total; ++j) st.perm[static_cast<size_t>(j)] = static_cast<uint32_t>(j);
            Rng rng = st.root.sub(streams::kShuffle, st.reshuffles).rng();
            for (int j = total - 1; j > 0; --j)
                std::swap(st.perm[static_cast<size_t>(j)],
                          st.perm[rng.below(static_cast<uint64_t>(j) + 1)]);
            st.reshuffles += 1;
            st.perm_pos = 0;
        }
        const uint32_t idx = st.perm[st.perm_pos++];
        std::memcpy(x.ptr() + static_cast<size_t>(i) * sample_sz,
                    train_x.ptr() + static_cast<size_t>(idx) * sample_sz,
                    sizeof(float) * sample_sz);
        y[static_cast<size_t>(i)] = train_y[idx];
    }
}

} // namespace

std::vector<EpochStats> run_training(TrainState& st, const Tensor& train_x,
                                     const std::vector<uint8_t>& train_y, const Tensor& test_x,
                                     const std::vector<uint8_t>& test_y,
                                     const EpochCallback& on_epoch) {
    if (train_x.dim(0) == 0 || train_y.empty()) throw DataError("run_training: empty training set");
    std::vector<EpochStats> all;
    Tensor x;
    std::vector<uint8_t> y;
    for (int e = st.epoch; e < st.cfg.max_epochs; ++e) {
        st.epoch = e;
        for (CimLayer& l : st.cim) {
            l.prog_attempts = 0;
            l.prog_programmed = 0;
            l.prog_verified = 0;
        }
        double loss_sum = 0.0;
        long updates = 0;
        for (int b = 0; b < st.cfg.batches_per_epoch; ++b) {
            next_batch(st, train_x, train_y, x, y);
            loss_sum += train_batch(st, x, y, b);
            if (st.cfg.mode == TrainMode::Mixed)
                updates += apply_threshold_updates(st, b);
            else if (st.cfg.mode == TrainMode::Naive)
                updates += apply_naive_updates(st, b);
        }
        const EvalMode em =
            (st.cfg.mode == TrainMode::Software || st.cfg.mode == TrainMode::Qat)
                ? EvalMode::Reference
                : EvalMode::Cim;
        EvalResult ev = evaluate(st, test_x, test_y, em, st.cfg.test_subset,
                                 static_cast<uint64_t>(e));

        EpochStats s;
        s.epoch = e;
        s.train_loss = loss_sum / st.cfg.batches_per_epoch;
        s.test_accuracy = ev.accuracy;
        s.weight_updates = updates;
        long attempts = 0, programmed = 0, verified = 0;
        for (const CimLayer& l : st.cim) {
            attempts += l.prog_attempts;
            programmed += l.prog_programmed;
            verified += l.prog_verified;
        }
        s.prog_attempts = attempts;
        s.verified_fraction = programmed > 0 ? static_cast<double>(verified) / programmed : 1.0;
        s.lr = st.opt.lr;
        if (st.cfg.plateau) st.opt.lr = st.sched.step(ev.accuracy, st.opt.lr);
        all.push_back(s);
        if (on_epoch) on_epoch(s);

        st.epoch = e + 1;
        if (st.cfg.mode == TrainMode::Mixed && st.cfg.stop_on_zero_updates && updates == 0) break;
        if (st.cfg.early_stop_accuracy > 0.0 && ev.accuracy >= st.cfg.early_stop_accuracy) break;
    }
    return all;
}

void save_checkpoint(const TrainState& st, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::vector<std::string> names = st.params.names;
    std::vector<Tensor> tensors = st.params.tensors;

    for (size_t i = 0; i < st.cim.size(); ++i) {
        const CimLayer& l = st.cim[i];
        const std::string tag = "cim" + std::to_string(i);
        names.push_back(tag + ".dw_acc");
        tensors.push_back(l.dw_acc);
        Tensor counts({static_cast<int>(l.update_count.size())});
        for (size_t j = 0; j < l.update_count.size(); ++j)
            counts[j] = static_cast<float>(l.update_count[j]);
        names.push_back(tag + ".update_count");
        tensors.push_back(std::move(counts));
        Tensor unver({static_cast<int>(l.unverified.size())});
        for (size_t j = 0; j < l.unverified.size(); ++j) unver[j] = l.unverified[j];
        names.push_back(tag + ".unverified");
        tensors.push_back(std::move(unver));
        Tensor meta({3});
        meta[0] = static_cast<float>(l.act_scale);
        meta[1] = static_cast<float>(l.theta);
        meta[2] = static_cast<float>(l.mapping.weight_clip);
        names.push_back(tag + ".meta");
        tensors.push_back(std::move(meta));
    }
    for (size_t i = 0; i < st.opt.m.size(); ++i) {
        if (st.opt.m[i].numel() == 0) continue;
        names.push_back("opt.m." + std::to_string(i));
        tensors.push_back(st.opt.m[i]);
        names.push_back("opt.v." + std::to_string(i));
        tensors.push_back(st.opt.v[i]);
    }
    Tensor meta({9});
    meta[0] = static_cast<float>(st.epoch);
    meta[1] = static_cast<float>(st.opt.t);
    meta[2] = static_cast<float>(st.reshuffles);
    meta[3] = static_cast<float>(st.perm_pos);
    meta[4] = static_cast<float>(st.total_updates);
    meta[5] = static_cast<float>(st.total_batches);
    meta[6] = static_cast<float>(st.opt.lr);
    meta[7] = static_cast<float>(st.sched.best);
    meta[8] = static_cast<float>(st.sched.stale);
    names.push_back("trainer.meta");
    tensors.push_back(std::move(meta));
    Tensor perm({static_cast<int>(st.perm.size())});
    for (size_t j = 0; j < st.perm.size(); ++j) perm[j] = static_cast<float>(st.perm[j]);
    names.push_back("trainer.perm");
    tensors.push_back(std::move(perm));
    save_tensors((fs::path(dir) / "checkpoint.bin").string(), names, tensors);

    std::ofstream dev((fs::path(dir) / "devices.bin").string(), std::ios::binary);
    if (!dev) throw CheckpointError("cannot write device snapshots in " + dir);
    for (const CimLayer& l : st.cim)
        for (const Tile& t : l.mapping.tiles) save_tile(t, dev);
}

void load_checkpoint(TrainState& st, const std::string& dir) {
    namespace fs = std::filesystem;
    std::vector<std::string> names;
    std::vector<Tensor> tensors;
    load_tensors((fs::path(dir) / "checkpoint.bin").string(), names, tensors);
    auto find = [&](const std::string& n) -> Tensor* {
        for (size_t i = 0; i < names.size(); ++i)
            if (names[i] == n) return &tensors[i];
        return nullptr;
    };

    for (int i = 0; i < st.params.size(); ++i) {
        Tensor* t = find(st.params.names[static_cast<size_t>(i)]);
        if (!t) throw CheckpointError("checkpoint missing parameter " +
                                      st.params.names[static_cast<size_t>(i)]);
        if (!t->same_shape(st.params[i]))
            throw CheckpointError("checkpoint shape mismatch for " +
                                  st.params.names[static_cast<size_t>(i)]);
        st.params[i] = *t;
    }
    for (size_t i = 0; i < st.cim.size(); ++i) {
        CimLayer& l = st.cim[i];
        const std::string tag = "cim" + std::to_string(i);
        if (Tensor* t = find(tag + ".dw_acc")) l.dw_acc = *t;
        if (Tensor* t = find(tag + ".update_count"))
            for (size_t j = 0; j < l.update_count.size(); ++j)
                l.update_count[j] = static_cast<uint32_t>((*t)[j]);
        if (Tensor* t = find(tag + ".unverified"))
            for (size_t j = 0; j < l.unverified.size(); ++j)
                l.unverified[j] = static_cast<uint8_t>((*t)[j]);
        if (Tensor* t = find(tag + ".meta")) {
            l.act_scale = (*t)[0];
            l.theta = (*t)[1];
        }
    }
    st.opt.ensure_state(st.params);
    for (size_t i = 0; i < st.opt.m.size(); ++i) {
        if (Tensor* t = find("opt.m." + std::to_string(i))) st.opt.m[i] = *t;
        if (Tensor* t = find("opt.v." + std::to_string(i))) st.opt.v[i] = *t;
    }
    if (Tensor* t = find("trainer.meta")) {
        st.epoch = static_cast<int>((*t)[0]);
        st.opt.t = static_cast<long>((*t)[1]);
        st.reshuffles = static_cast<uint64_t>((*t)[2]);
        st.perm_pos = static_cast<size_t>((*t)[3]);
        st.total_updates = static_cast<long long>((*t)[4]);
        st.total_batches = static_cast<long long>((*t)[5]);
        st.opt.lr = (*t)[6];
        st.sched.best = (*t)[7];
        st.sched.stale = static_cast<int>((*t)[8]);
    }
    if (Tensor* t = find("trainer.perm")) {
        st.perm.resize(t->numel());
        for (size_t j = 0; j < st.perm.size(); ++j)
            st.perm[j] = static_cast<uint32_t>((*t)[j]);
    }

    std::ifstream dev((fs::path(dir) / "devices.bin").string(), std::ios::binary);
    if (!dev) throw CheckpointError("missing device snapshots in " + dir);
    for (CimLayer& l : st.cim)
        for (Tile& t : l.mapping.tiles) {
            Tile loaded = load_tile(dev, t.config);
            if (loaded.rows() != t.rows() || loaded.cols() != t.cols())
                throw CheckpointError("device snapshot geometry mismatch");
            t.g_us = std::move(loaded.g_us);
        }
}

} // namespace memtrain
