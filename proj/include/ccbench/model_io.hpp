#pragma once

#include "ccbench/crosscoherence.hpp"
#include "ccbench/datasets.hpp"

#include <memory>
#include <string>

namespace ccbench::model_io {

using json = nlohmann::json;

json to_json(const encoders::EncoderConfig& cfg);
encoders::EncoderConfig encoder_config_from_json(const json& j);

json to_json(const encoders::DecoderConfig& cfg);
encoders::DecoderConfig decoder_config_from_json(const json& j);

json to_json(const crosscoherence::ScorerConfig& cfg);
crosscoherence::ScorerConfig scorer_config_from_json(const json& j);

/// Reduced stack sized for CPU desk-scale runs; all dimensions configurable
/// through config files either way.
encoders::EncoderConfig desk_encoder_config();
encoders::DecoderConfig desk_decoder_config();
crosscoherence::ScorerConfig desk_scorer_config();

// Autoencoder checkpoints: tensors + <path>.meta.json with both configs.
void save_autoencoder(const encoders::AutoencoderParams& params, const std::string& path,
                      const json& extra_meta = {});
encoders::AutoencoderParams load_autoencoder(const std::string& path,
                                             json* meta_out = nullptr);

// Scorer checkpoints: encoder + provider + scorer tensors, sidecar meta with
// every config and (for the builtin provider) the vocabulary.
void save_model(crosscoherence::CrossCoherenceModel& model, const std::string& path,
                const json& extra_meta = {});
std::unique_ptr<crosscoherence::CrossCoherenceModel> load_model(const std::string& path,
                                                                json* meta_out = nullptr);

// Triplet files: JSONL with a schema header.
void save_triplets(const std::vector<distractors::Triplet>& triplets,
                   const std::string& path, const json& meta = {});
std::vector<distractors::Triplet> load_triplets(const std::string& path,
                                                json* meta_out = nullptr);

}  // namespace ccbench::model_io
