#include "memtrain/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

namespace memtrain {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

struct Ini {
    // section -> key -> value; insertion order irrelevant
    std::map<std::string, std::map<std::string, std::string>> sections;
    std::string origin;

    static Ini parse(const std::string& text, const std::string& origin) {
        Ini ini;
        ini.origin = origin;
        std::istringstream in(text);
        std::string line, section;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const size_t hash = line.find_first_of("#;");
            if (hash != std::string::npos) line = line.substr(0, hash);
            line = trim(line);
            if (line.empty()) continue;
            if (line.front() == '[') {
                if (line.back() != ']')
                    throw ConfigError(origin + ":" + std::to_string(lineno) + ": malformed section");
                section = trim(line.substr(1, line.size() - 2));
                ini.sections[section];
                continue;
            }
            const size_t eq = line.find('=');
            if (eq == std::string::npos)
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
            const std::string key = trim(line.substr(0, eq));
            const std::string value = trim(line.substr(eq + 1));
            if (section.empty())
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": key outside a section");
            ini.sections[section][key] = value;
        }
        return ini;
    }
};

class SectionReader {
public:
    SectionReader(const Ini& ini, const std::string& name) : ini_(ini), name_(name) {
        auto it = ini.sections.find(name);
        if (it != ini.sections.end()) kv_ = &it->second;
    }

    bool present() const { return kv_ != nullptr; }

    std::string str(const std::string& key, const std::string& dflt) {
        seen_.insert(key);
        if (!kv_) return dflt;
        auto it = kv_->find(key);
        return it == kv_->end() ? dflt : it->second;
    }
    double num(const std::string& key, double dflt) {
        const std::string v = str(key, "");
        if (v.empty()) return dflt;
        try {
            size_t pos = 0;
            const double d = std::stod(v, &pos);
            if (pos != v.size()) throw std::invalid_argument(v);
            return d;
        } catch (const std::exception&) {
            throw ConfigError(ini_.origin + ": [" + name_ + "] " + key + " = '" + v +
                              "' is not a number");
        }
    }
    long integer(const std::string& key, long dflt) {
        const double d = num(key, static_cast<double>(dflt));
        const long l = static_cast<long>(d);
        if (static_cast<double>(l) != d)
            throw ConfigError(ini_.origin + ": [" + name_ + "] " + key + " must be an integer");
        return l;
    }
    bool flag(const std::string& key, bool dflt) {
        const std::string v = str(key, "");
        if (v.empty()) return dflt;
        if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
        if (v == "0" || v == "false" || v == "off" || v == "no") return false;
        throw ConfigError(ini_.origin + ": [" + name_ + "] " + key + " = '" + v +
                          "' is not a boolean");
    }
    std::vector<std::string> list(const std::string& key) {
        std::vector<std::string> out;
        std::string v = str(key, "");
        std::istringstream in(v);
        std::string item;
        while (std::getline(in, item, ',')) {
            item = trim(item);
            if (!item.empty()) out.push_back(item);
        }
        return out;
    }
    std::vector<double> numbers(const std::string& key) {
        std::vector<double> out;
        for (const auto& s : list(key)) {
            try {
                out.push_back(std::stod(s));
            } catch (const std::exception&) {
                throw ConfigError(ini_.origin + ": [" + name_ + "] " + key + ": '" + s +
                                  "' is not a number");
            }
        }
        return out;
    }

    void finish() const {
        if (!kv_) return;
        for (const auto& [key, value] : *kv_)
            if (!seen_.count(key))
                throw ConfigError(ini_.origin + ": [" + name_ + "] unknown key '" + key + "'");
    }

private:
    const Ini& ini_;
    std::string name_;
    const std::map<std::string, std::string>* kv_ = nullptr;
    std::set<std::string> seen_;
};

TrainMode parse_mode(const std::string& s, const std::string& origin) {
    if (s == "mixed") return TrainMode::Mixed;
    if (s == "naive") return TrainMode::Naive;
    if (s == "software") return TrainMode::Software;
    if (s == "qat") return TrainMode::Qat;
    throw ConfigError(origin + ": unknown training mode '" + s + "'");
}

} // namespace

RunConfig parse_config(const std::string& text, const std::string& origin) {
    const Ini ini = Ini::parse(text, origin);
    static const std::set<std::string> known = {"run",  "data", "device",  "tile",
                                                "map",  "cost", "transfer"};
    for (const auto& [name, _] : ini.sections)
        if (!known.count(name))
            throw ConfigError(origin + ": unknown section [" + name + "]");

    RunConfig rc;

    SectionReader run(ini, "run");
    rc.model = run.str("model", rc.model);
    rc.out_dir = run.str("out", rc.out_dir);
    rc.threads = static_cast<int>(run.integer("threads", 0));
    rc.trainer.mode = parse_mode(run.str("mode", "mixed"), origin);
    rc.trainer.seed = static_cast<uint64_t>(run.integer("seed", 1));
    rc.trainer.batch_size = static_cast<int>(run.integer("batch_size", 64));
    rc.trainer.batches_per_epoch = static_cast<int>(run.integer("batches_per_epoch", 400));
    rc.trainer.max_epochs = static_cast<int>(run.integer("max_epochs", 25));
    rc.trainer.lr = run.num("lr", 0.004);
    rc.trainer.weight_decay = run.num("weight_decay", 1e-4);
    rc.trainer.plateau = run.flag("plateau", false);
    rc.trainer.patience = static_cast<int>(run.integer("patience", 5));
    rc.trainer.lr_factor = run.num("lr_factor", 0.5);
    rc.trainer.train_alpha = run.flag("train_alpha", true);
    rc.trainer.qat_levels = static_cast<int>(run.integer("qat_levels", 16));
    rc.trainer.granularity_levels = static_cast<int>(run.integer("granularity_levels", 0));
    rc.trainer.test_subset = static_cast<int>(run.integer("test_subset", 2560));
    rc.trainer.init_from_devices = run.flag("init_from_devices", true);
    rc.trainer.init_lo_ua = run.num("init_lo_ua", 0.82);
    rc.trainer.init_hi_ua = run.num("init_hi_ua", 2.0);
    rc.trainer.stop_on_zero_updates = run.flag("stop_on_zero_updates", true);
    rc.trainer.early_stop_accuracy = run.num("early_stop_accuracy", 0.0);
    rc.trainer.parallel = run.flag("parallel", true);
    run.finish();

    if (rc.trainer.batch_size < 1) throw ConfigError(origin + ": batch_size must be >= 1");

    SectionReader data(ini, "data");
    rc.data.kind = data.str("kind", "mnist");
    rc.data.root = data.str("root", "");
    rc.data.train_images = data.str("train_images", rc.data.train_images);
    rc.data.train_labels = data.str("train_labels", rc.data.train_labels);
    rc.data.test_images = data.str("test_images", rc.data.test_images);
    rc.data.test_labels = data.str("test_labels", rc.data.test_labels);
    rc.data.cifar_train = data.list("cifar_train");
    rc.data.cifar_test = data.list("cifar_test");
    rc.data.synth_train = static_cast<int>(data.integer("synth_train", 8000));
    rc.data.synth_test = static_cast<int>(data.integer("synth_test", 2000));
    data.finish();

    SectionReader dev(ini, "device");
    rc.device.i_min_ua = dev.num("i_min_ua", 1.0);
    rc.device.i_max_ua = dev.num("i_max_ua", 7.0);
    rc.device.v_read_v = dev.num("v_read_v", 0.1);
    rc.device.n_levels = static_cast<int>(dev.integer("n_levels", 16));
    rc.device.sigma_read = dev.num("sigma_read", 0.3);
    rc.device.sigma_prog = dev.num("sigma_prog", 0.5);
    rc.device.verify_tol = dev.num("verify_tol", 0.5);
    rc.device.max_trials = static_cast<int>(dev.integer("max_trials", 2));
    dev.finish();
    rc.device.validate();

    SectionReader tile(ini, "tile");
    rc.tile.rows = static_cast<int>(tile.integer("rows", 64));
    rc.tile.cols = static_cast<int>(tile.integer("cols", 64));
    rc.tile.dac_bits = static_cast<int>(tile.integer("dac_bits", 8));
    rc.tile.adc_bits = static_cast<int>(tile.integer("adc_bits", 8));
    rc.tile.adc_i_max_ua = tile.num("adc_i_max_ua", 70.0);
    rc.tile.sigma_adc_ua = tile.num("sigma_adc_ua", 0.0);
    rc.tile.group_size = static_cast<int>(tile.integer("group_size", 8));
    tile.finish();
    rc.tile.validate();

    SectionReader map(ini, "map");
    rc.map.g_min_us = map.num("g_min_us", rc.device.g_min_us());
    rc.map.g_max_us = map.num("g_max_us", rc.device.g_max_us());
    rc.map.weight_clip = map.num("weight_clip", 1.0);
    rc.map.tile_rows = rc.tile.rows;
    rc.map.tile_cols = rc.tile.cols;
    map.finish();

    SectionReader cost(ini, "cost");
    rc.cost.tile_rows = static_cast<int>(cost.integer("tile_rows", rc.tile.rows));
    rc.cost.tile_cols = static_cast<int>(cost.integer("tile_cols", rc.tile.cols));
    rc.cost.dac_bits = rc.tile.dac_bits;
    rc.cost.adc_bits = rc.tile.adc_bits;
    rc.cost.group_size = rc.tile.group_size;
    rc.cost.e_tile_op_nj = cost.num("e_tile_op_nj", 2.66);
    rc.cost.clock_mhz = cost.num("clock_mhz", 100.0);
    rc.cost.t_op_us = cost.num("t_op_us", 0.0);
    rc.cost_input_bits = static_cast<int>(cost.integer("input_bits", 8));
    rc.cost_weight_bits = static_cast<int>(cost.integer("weight_bits", 4));
    {
        // copies = layer:factor pairs, e.g. "0:8" or "0:4,1:4"
        const auto items = cost.list("copies");
        for (const auto& item : items) {
            const size_t colon = item.find(':');
            if (colon == std::string::npos)
                throw ConfigError(origin + ": [cost] copies entries must be layer:factor");
            const int layer = std::stoi(item.substr(0, colon));
            const int factor = std::stoi(item.substr(colon + 1));
            if (layer < 0 || factor < 1)
                throw ConfigError(origin + ": [cost] bad copies entry '" + item + "'");
            if (static_cast<size_t>(layer) >= rc.cost.copies.size())
                rc.cost.copies.resize(static_cast<size_t>(layer) + 1, 1);
            rc.cost.copies[static_cast<size_t>(layer)] = factor;
        }
    }
    cost.finish();

    SectionReader tr(ini, "transfer");
    if (tr.present()) {
        auto sigmas = tr.numbers("sigmas");
        if (!sigmas.empty()) rc.transfer.sigmas = std::move(sigmas);
        rc.transfer.samples = static_cast<int>(tr.integer("samples", 10));
        rc.transfer.models = tr.list("models");
        rc.transfer.step_levels = static_cast<int>(tr.integer("step_levels", 16));
        rc.transfer.subset = static_cast<int>(tr.integer("subset", 2560));
        rc.transfer.baseline_accuracy = tr.num("baseline_accuracy", 0.0);
    }
    tr.finish();

    return rc;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), path);
}

} // namespace memtrain
