#include "memtrain/metrics.hpp"

#include <cstdio>
#include <fstream>

#include "memtrain/errors.hpp"

namespace memtrain {

namespace {
std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}
} // namespace

std::string epoch_stats_json(const EpochStats& s) {
    std::string out = "{";
    out += "\"epoch\":" + std::to_string(s.epoch);
    out += ",\"train_loss\":" + fmt(s.train_loss);
    out += ",\"test_accuracy\":" + fmt(s.test_accuracy);
    out += ",\"weight_updates\":" + std::to_string(s.weight_updates);
    out += ",\"prog_attempts\":" + std::to_string(s.prog_attempts);
    out += ",\"verified_fraction\":" + fmt(s.verified_fraction);
    out += ",\"lr\":" + fmt(s.lr);
    out += "}";
    return out;
}

void write_epoch_jsonl(const std::string& path, const std::vector<EpochStats>& stats) {
    std::ofstream f(path);
    if (!f) throw DataError("cannot write " + path);
    for (const auto& s : stats) f << epoch_stats_json(s) << "\n";
}

void append_epoch_jsonl(const std::string& path, const EpochStats& s) {
    std::ofstream f(path, std::ios::app);
    if (!f) throw DataError("cannot write " + path);
    f << epoch_stats_json(s) << "\n";
}

void write_summary_csv(const std::string& path, const std::vector<EpochStats>& stats) {
    std::ofstream f(path);
    if (!f) throw DataError("cannot write " + path);
    f << "epoch,train_loss,test_accuracy,weight_updates,prog_attempts,verified_fraction,lr\n";
    for (const auto& s : stats)
        f << s.epoch << ',' << fmt(s.train_loss) << ',' << fmt(s.test_accuracy) << ','
          << s.weight_updates << ',' << s.prog_attempts << ',' << fmt(s.verified_fraction) << ','
          << fmt(s.lr) << "\n";
}

void write_confusion_csv(const std::string& path, const ConfusionMatrix& cm) {
    std::ofstream f(path);
    if (!f) throw DataError("cannot write " + path);
    f << "true\\pred";
    for (int c = 0; c < cm.classes; ++c) f << ',' << c;
    f << "\n";
    for (int t = 0; t < cm.classes; ++t) {
        f << t;
        for (int p = 0; p < cm.classes; ++p) f << ',' << cm.at(t, p);
        f << "\n";
    }
}

void write_transfer_csv(const std::string& path, const std::vector<TransferRecord>& records) {
    std::ofstream f(path);
    if (!f) throw DataError("cannot write " + path);
    f << "model,sigma,trial,accuracy,normalized\n";
    for (const auto& r : records)
        f << r.model << ',' << fmt(r.sigma) << ',' << r.trial << ',' << fmt(r.accuracy) << ','
          << fmt(r.normalized) << "\n";
}

std::string transfer_summary_json(const std::vector<TransferSummary>& summaries) {
    std::string out = "[";
    for (size_t i = 0; i < summaries.size(); ++i) {
        const auto& s = summaries[i];
        if (i) out += ",";
        out += "\n  {\"model\":\"" + s.model + "\",\"sigma\":" + fmt(s.sigma) +
               ",\"min\":" + fmt(s.min) + ",\"q1\":" + fmt(s.q1) + ",\"median\":" + fmt(s.median) +
               ",\"q3\":" + fmt(s.q3) + ",\"max\":" + fmt(s.max) + "}";
    }
    out += "\n]\n";
    return out;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path);
    if (!f) throw DataError("cannot write " + path);
    f << text;
}

} // namespace memtrain
