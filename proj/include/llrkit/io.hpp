#pragma once

// JSON documents for parameter points, plans, reports and configs. Writers
// emit 2-space indented JSON with a trailing newline; doubles use the
// shortest representation that parses back to the same bits, so
// write -> read -> write is byte-identical.

#include <filesystem>
#include <string>

#include "json.hpp"
#include "llrkit/embedding.hpp"
#include "llrkit/llr.hpp"
#include "llrkit/netzoo.hpp"
#include "llrkit/rank.hpp"
#include "llrkit/trainlab.hpp"

namespace llrkit::io {

using json = nlohmann::ordered_json;

json to_json(const netzoo::NetworkSpec& spec);
netzoo::NetworkSpec spec_from_json(const json& j);

/// {"format": "llrkit.params", "version", "spec", "parameter_count", "values"}
json to_json(const netzoo::ParamPoint& p);
netzoo::ParamPoint params_from_json(const json& j);

json to_json(const embedding::EmbeddingPlan& plan);
/// The "target" field is optional; when present it must match the steps.
embedding::EmbeddingPlan plan_from_json(const json& j);

/// Infinite gap ratios are written as the string "inf".
json to_json(const rank::RankReport& r);
rank::RankReport rank_report_from_json(const json& j);

json to_json(const llr::LLRReport& r);

json to_json(const trainlab::TrainConfig& c);
trainlab::TrainConfig train_config_from_json(const json& j);

/// Sweep document: the sweep fields plus a "train" section.
struct SweepFile {
  trainlab::SweepConfig sweep;
  trainlab::TrainConfig train;
};
json to_json(const SweepFile& f);
SweepFile sweep_file_from_json(const json& j);

json to_json(const embedding::OutputCheck& c);
json to_json(const embedding::CriticalityCheck& c);

std::string dump(const json& j);
json parse(const std::string& text, const std::string& what = "document");

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& content);
json read_json(const std::filesystem::path& path);

netzoo::ParamPoint read_params(const std::filesystem::path& path);
embedding::EmbeddingPlan read_plan(const std::filesystem::path& path);

}  // namespace llrkit::io
