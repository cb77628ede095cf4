#pragma once

#include <string>
#include <vector>

#include "memtrain/analysis.hpp"
#include "memtrain/trainer.hpp"

namespace memtrain {

// Metric emission with fixed formatting so identical runs produce
// byte-identical files.

std::string epoch_stats_json(const EpochStats& s);

void write_epoch_jsonl(const std::string& path, const std::vector<EpochStats>& stats);
void append_epoch_jsonl(const std::string& path, const EpochStats& s);

void write_summary_csv(const std::string& path, const std::vector<EpochStats>& stats);

void write_confusion_csv(const std::string& path, const ConfusionMatrix& cm);

void write_transfer_csv(const std::string& path, const std::vector<TransferRecord>& records);
std::string transfer_summary_json(const std::vector<TransferSummary>& summaries);
void write_text(const std::string& path, const std::string& text);

} // namespace memtrain
