#include "ccbench/model_io.hpp"

#include "ccbench/io.hpp"

#include <fstream>

namespace ccbench::model_io {

namespace {

json stage_to_json(const encoders::SetAbstractionConfig& s) {
  return {{"centers", s.num_centers}, {"radius", s.radius}, {"k", s.k},
          {"mlp", s.mlp_widths}};
}

encoders::SetAbstractionConfig stage_from_json(const json& j) {
  encoders::SetAbstractionConfig s;
  s.num_centers = j.at("centers").get<Index>();
  s.radius = j.at("radius").get<double>();
  s.k = j.at("k").get<Index>();
  s.mlp_widths = j.at("mlp").get<std::vector<Index>>();
  return s;
}

}  // namespace

json to_json(const encoders::EncoderConfig& cfg) {
  return {{"stage1", stage_to_json(cfg.stage1)},
          {"stage2", stage_to_json(cfg.stage2)},
          {"stage3", cfg.stage3_widths},
          {"activation", nn::to_string(cfg.activation)},
          {"min_points", cfg.min_points}};
}

encoders::EncoderConfig encoder_config_from_json(const json& j) {
  encoders::EncoderConfig cfg;
  cfg.stage1 = stage_from_json(j.at("stage1"));
  cfg.stage2 = stage_from_json(j.at("stage2"));
  cfg.stage3_widths = j.at("stage3").get<std::vector<Index>>();
  cfg.activation = nn::activation_from_string(j.at("activation").get<std::string>());
  cfg.min_points = j.at("min_points").get<Index>();
  return cfg;
}

json to_json(const encoders::DecoderConfig& cfg) {
  return {{"out_points", cfg.out_points}, {"hidden", cfg.hidden}};
}

encoders::DecoderConfig decoder_config_from_json(const json& j) {
  encoders::DecoderConfig cfg;
  cfg.out_points = j.at("out_points").get<Index>();
  cfg.hidden = j.at("hidden").get<std::vector<Index>>();
  return cfg;
}

json to_json(const crosscoherence::ScorerConfig& cfg) {
  return {{"d_model", cfg.attn.d_model},
          {"heads", cfg.attn.heads},
          {"residual_norm", cfg.attn.use_residual_norm},
          {"blocks", cfg.blocks},
          {"head", cfg.head_widths},
          {"activation", nn::to_string(cfg.head_activation)}};
}

crosscoherence::ScorerConfig scorer_config_from_json(const json& j) {
  crosscoherence::ScorerConfig cfg;
  cfg.attn.d_model = j.at("d_model").get<Index>();
  cfg.attn.heads = j.at("heads").get<Index>();
  cfg.attn.use_residual_norm = j.at("residual_norm").get<bool>();
  cfg.blocks = j.at("blocks").get<Index>();
  cfg.head_widths = j.at("head").get<std::vector<Index>>();
  cfg.head_activation = nn::activation_from_string(j.at("activation").get<std::string>());
  return cfg;
}

encoders::EncoderConfig desk_encoder_config() {
  encoders::EncoderConfig cfg;
  cfg.stage1 = {128, 0.25, 16, {32, 32, 64}};
  cfg.stage2 = {32, 0.5, 16, {64, 64, 128}};
  cfg.stage3_widths = {128, 128, 256};
  return cfg;
}

encoders::DecoderConfig desk_decoder_config() {
  encoders::DecoderConfig cfg;
  cfg.out_points = 256;
  cfg.hidden = {256};
  return cfg;
}

crosscoherence::ScorerConfig desk_scorer_config() {
  crosscoherence::ScorerConfig cfg;
  cfg.attn = {64, 4, true};
  cfg.blocks = 1;
  cfg.head_widths = {128, 64};
  return cfg;
}

namespace {

void write_meta(const std::string& path, const json& meta) {
  io::write_text_file(path + ".meta.json", meta.dump(2) + "\n");
}

json read_meta(const std::string& path) {
  return json::parse(io::read_text_file(path + ".meta.json"));
}

}  // namespace

void save_autoencoder(const encoders::AutoencoderParams& params, const std::string& path,
                      const json& extra_meta) {
  io::Checkpoint ckpt;
  encoders::save_params(ckpt, const_cast<encoders::AutoencoderParams&>(params).params());
  io::write_checkpoint(path, ckpt);
  json meta;
  meta["kind"] = "autoencoder";
  meta["encoder"] = to_json(params.encoder.cfg);
  meta["decoder"] = to_json(params.decoder.cfg);
  if (!extra_meta.is_null()) meta["run"] = extra_meta;
  write_meta(path, meta);
}

encoders::AutoencoderParams load_autoencoder(const std::string& path, json* meta_out) {
  const json meta = read_meta(path);
  check(meta.value("kind", "") == "autoencoder",
        "checkpoint " + path + " is not an autoencoder checkpoint");
  encoders::AutoencoderParams params(encoder_config_from_json(meta.at("encoder")),
                                     decoder_config_from_json(meta.at("decoder")));
  encoders::load_params(io::read_checkpoint(path), params.params());
  if (meta_out) *meta_out = meta;
  return params;
}

void save_model(crosscoherence::CrossCoherenceModel& model, const std::string& path,
                const json& extra_meta) {
  io::Checkpoint ckpt;
  encoders::save_params(ckpt, model.all_params());
  io::write_checkpoint(path, ckpt);

  json meta;
  meta["kind"] = "crosscoherence";
  meta["encoder"] = to_json(model.encoder.cfg);
  meta["scorer"] = to_json(model.scorer.cfg);
  meta["encoder_frozen"] = model.encoder_frozen;
  if (auto* builtin = dynamic_cast<encoders::BuiltinTextProvider*>(model.provider.get())) {
    meta["provider"] = {{"kind", "builtin"},
                        {"d_text", builtin->dim()},
                        {"attn_heads", builtin->config().heads},
                        {"frozen", builtin->frozen()},
                        {"vocab", builtin->vocab().words}};
  } else {
    meta["provider"] = {{"kind", "file"}, {"id", model.provider->id()}};
  }
  if (!extra_meta.is_null()) meta["run"] = extra_meta;
  write_meta(path, meta);
}

std::unique_ptr<crosscoherence::CrossCoherenceModel> load_model(const std::string& path,
                                                                json* meta_out) {
  const json meta = read_meta(path);
  check(meta.value("kind", "") == "crosscoherence",
        "checkpoint " + path + " is not a scorer checkpoint");

  const auto enc_cfg = encoder_config_from_json(meta.at("encoder"));
  const auto scorer_cfg = scorer_config_from_json(meta.at("scorer"));
  const json& pj = meta.at("provider");

  std::shared_ptr<encoders::TextProvider> provider;
  if (pj.at("kind") == "builtin") {
    encoders::BuiltinTextProvider::Config cfg;
    cfg.d_text = pj.at("d_text").get<Index>();
    cfg.heads = pj.value("attn_heads", Index{2});
    cfg.frozen = pj.at("frozen").get<bool>();
    provider = std::make_shared<encoders::BuiltinTextProvider>(
        encoders::Vocabulary::from_words(pj.at("vocab").get<std::vector<std::string>>()),
        cfg);
  } else {
    throw ValidationError(
        "checkpoint " + path +
        " uses a file-backed text provider; reload it with the embedding file and "
        "rebuild the model in code");
  }

  auto model = std::make_unique<crosscoherence::CrossCoherenceModel>(enc_cfg, provider,
                                                                     scorer_cfg);
  model->encoder_frozen = meta.value("encoder_frozen", true);
  encoders::load_params(io::read_checkpoint(path), model->all_params());
  if (meta_out) *meta_out = meta;
  return model;
}

void save_triplets(const std::vector<distractors::Triplet>& triplets,
                   const std::string& path, const json& meta) {
  std::string out;
  json header;
  header["schema"] = "ccbench.triplets";
  header["version"] = 1;
  if (!meta.is_null()) header["meta"] = meta;
  out += header.dump() + "\n";
  for (const auto& t : triplets) {
    json j;
    j["text"] = t.text;
    j["target"] = t.target;
    j["shapes"] = t.shape_ids;
    j["tags"] = t.tags;
    out += j.dump() + "\n";
  }
  io::write_text_file(path, out);
}

std::vector<distractors::Triplet> load_triplets(const std::string& path, json* meta_out) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open triplet file: " + path);
  std::vector<distractors::Triplet> out;
  std::string line;
  bool have_header = false;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ValidationError("triplets " + path + " line " + std::to_string(line_no) +
                            ": " + e.what());
    }
    if (!have_header) {
      check(j.value("schema", "") == "ccbench.triplets",
            "triplets " + path + ": missing schema header");
      if (meta_out && j.contains("meta")) *meta_out = j.at("meta");
      have_header = true;
      continue;
    }
    distractors::Triplet t;
    t.text = j.at("text").get<std::string>();
    t.target = j.at("target").get<int>();
    t.shape_ids = j.at("shapes").get<std::vector<std::string>>();
    t.tags = j.at("tags").get<std::vector<std::string>>();
    check(t.target >= 0 && t.target < static_cast<int>(t.shape_ids.size()),
          "triplets " + path + " line " + std::to_string(line_no) + ": target out of range");
    out.push_back(std::move(t));
  }
  check(have_header, "triplets " + path + ": empty file");
  return out;
}

}  // namespace ccbench::model_io
