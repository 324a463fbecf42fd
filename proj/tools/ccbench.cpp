// Command-line front end for the text-to-shape coherence benchmark:
// synthetic data generation, autoencoder training, distractor mining,
// triplet construction, scorer training, the two evaluation protocols,
// caption refinement and report rendering.

#include "ccbench/crosscoherence.hpp"
#include "ccbench/datasets.hpp"
#include "ccbench/distractors.hpp"
#include "ccbench/io.hpp"
#include "ccbench/model_io.hpp"
#include "ccbench/protocols.hpp"
#include "ccbench/refine.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

namespace fs = std::filesystem;
using namespace ccbench;
using json = nlohmann::json;

namespace {

struct ScorerChoice {
  std::string kind = "cc";  // cc | oracle | random
  std::string checkpoint;
  std::uint64_t scorer_seed = 0;
};

void add_scorer_options(CLI::App* cmd, ScorerChoice& choice) {
  cmd->add_option("--scorer", choice.kind, "scorer backend: cc, oracle or random")
      ->check(CLI::IsMember({"cc", "oracle", "random"}));
  cmd->add_option("--checkpoint", choice.checkpoint, "scorer checkpoint (for --scorer cc)");
  cmd->add_option("--scorer-seed", choice.scorer_seed, "seed for --scorer random");
}

struct LoadedScorer {
  protocols::Scorer fn;
  json echo;
  std::unique_ptr<crosscoherence::CrossCoherenceModel> model;  // keeps cc alive
};

LoadedScorer make_scorer(const ScorerChoice& choice,
                         const datasets::DatasetManifest& manifest,
                         const datasets::CloudStore& store) {
  LoadedScorer out;
  if (choice.kind == "cc") {
    check(!choice.checkpoint.empty(), "--scorer cc needs --checkpoint");
    out.model = model_io::load_model(choice.checkpoint);
    auto* model = out.model.get();
    out.fn = [model](const geometry::ColoredPointCloud& cloud, const std::string& text) {
      return model->score_pair(cloud, text);
    };
    out.echo = {{"scorer", "cc"}, {"checkpoint", choice.checkpoint}};
  } else if (choice.kind == "oracle") {
    out.fn = protocols::make_attribute_oracle(manifest, store);
    out.echo = {{"scorer", "oracle"}};
  } else {
    out.fn = protocols::make_random_scorer(choice.scorer_seed);
    out.echo = {{"scorer", "random"}, {"scorer_seed", choice.scorer_seed}};
  }
  return out;
}

encoders::EncoderConfig encoder_preset(const std::string& preset) {
  if (preset == "desk") return model_io::desk_encoder_config();
  return encoders::EncoderConfig{};
}

int run(int argc, char** argv) {
  CLI::App app{"ccbench: text-to-shape coherence benchmark"};
  app.require_subcommand(1);

  // ---- gen-synthetic ----
  auto* gen = app.add_subcommand("gen-synthetic", "generate a synthetic shape+caption dataset");
  std::string gen_out;
  datasets::GenConfig gen_cfg;
  gen->set_config("--config");
  gen->add_option("--out", gen_out, "output dataset directory")->required();
  gen->add_option("--chairs", gen_cfg.num_chairs, "number of chairs");
  gen->add_option("--tables", gen_cfg.num_tables, "number of tables");
  gen->add_option("--points", gen_cfg.points_per_cloud, "points per cloud");
  gen->add_option("--captions-min", gen_cfg.captions_min, "min captions per shape");
  gen->add_option("--captions-max", gen_cfg.captions_max, "max captions per shape");
  gen->add_option("--train-frac", gen_cfg.train_fraction, "train split fraction");
  gen->add_option("--val-frac", gen_cfg.val_fraction, "val split fraction");
  gen->add_option("--seed", gen_cfg.seed, "master seed");
  gen->callback([&] {
    auto manifest = datasets::generate_synthetic(gen_cfg, gen_out);
    manifest.meta["command"] = {{"name", "gen-synthetic"},
                                {"chairs", gen_cfg.num_chairs},
                                {"tables", gen_cfg.num_tables},
                                {"points", gen_cfg.points_per_cloud},
                                {"seed", gen_cfg.seed}};
    const std::string path = (fs::path(gen_out) / "manifest.jsonl").string();
    datasets::save_manifest(manifest, path);
    std::cout << "wrote " << manifest.records.size() << " shapes to " << path << "\n";
  });

  // ---- train-ae ----
  auto* tae = app.add_subcommand("train-ae", "train the reconstruction autoencoder");
  std::string tae_manifest, tae_out, tae_preset = "desk", tae_split = "train";
  encoders::AeTrainConfig tae_cfg;
  tae->set_config("--config");
  tae->add_option("--manifest", tae_manifest, "dataset manifest")->required();
  tae->add_option("--out", tae_out, "output checkpoint path")->required();
  tae->add_option("--preset", tae_preset, "model size preset")
      ->check(CLI::IsMember({"desk", "full"}));
  tae->add_option("--split", tae_split, "training split");
  tae->add_option("--epochs", tae_cfg.epochs, "training epochs");
  tae->add_option("--batch", tae_cfg.batch, "batch size");
  tae->add_option("--lr", tae_cfg.lr, "learning rate");
  tae->add_option("--lambda-color", tae_cfg.lambda_color, "color loss weight");
  tae->add_option("--seed", tae_cfg.seed, "seed");
  tae->callback([&] {
    const auto manifest = datasets::load_manifest(tae_manifest);
    const datasets::CloudStore store(manifest, datasets::manifest_directory(tae_manifest));
    std::vector<geometry::ColoredPointCloud> clouds;
    for (const auto* rec : manifest.split_records(tae_split)) {
      clouds.push_back(store.get(rec->id));
    }
    check(!clouds.empty(), "no shapes in split " + tae_split);

    encoders::AutoencoderParams params(encoder_preset(tae_preset),
                                       tae_preset == "desk"
                                           ? model_io::desk_decoder_config()
                                           : encoders::DecoderConfig{});
    Rng rng(tae_cfg.seed);
    params.init(rng);
    const auto result = encoders::train_autoencoder(params, clouds, tae_cfg);

    json run_meta = {{"command", "train-ae"},
                     {"manifest", tae_manifest},
                     {"split", tae_split},
                     {"epochs", tae_cfg.epochs},
                     {"batch", tae_cfg.batch},
                     {"lr", tae_cfg.lr},
                     {"lambda_color", tae_cfg.lambda_color},
                     {"seed", tae_cfg.seed},
                     {"epoch_loss", result.epoch_loss},
                     {"final_mean_chamfer", result.final_mean_chamfer}};
    model_io::save_autoencoder(params, tae_out, run_meta);
    std::cout << "trained on " << clouds.size() << " shapes, "
              << "first-epoch loss " << result.epoch_loss.front() << ", last "
              << result.epoch_loss.back() << ", mean chamfer "
              << result.final_mean_chamfer << "\nwrote " << tae_out << "\n";
  });

  // ---- mine ----
  auto* mine = app.add_subcommand("mine", "mine easy/hard distractors in latent space");
  std::string mine_manifest, mine_ae, mine_out;
  distractors::MiningConfig mine_cfg;
  int mine_workers = 1;
  mine->set_config("--config");
  mine->add_option("--manifest", mine_manifest, "dataset manifest")->required();
  mine->add_option("--ae", mine_ae, "autoencoder checkpoint")->required();
  mine->add_option("--out", mine_out, "output manifest path")->required();
  mine->add_option("--seed", mine_cfg.seed, "seed for the easy pick");
  mine->add_option("--quantile", mine_cfg.easy_quantile, "easy distance quantile");
  mine->add_option("--workers", mine_workers, "parallel workers");
  mine->callback([&] {
    auto manifest = datasets::load_manifest(mine_manifest);
    const datasets::CloudStore store(manifest,
                                     datasets::manifest_directory(mine_manifest));
    const auto ae = model_io::load_autoencoder(mine_ae);

    std::vector<std::pair<std::string, std::string>> ids;
    for (const auto& rec : manifest.records) ids.emplace_back(rec.id, rec.class_label);
    const auto latents = distractors::compute_latents(
        ids, [&](const std::string& id) { return store.get(id); }, ae.encoder,
        mine_workers);
    const auto mined = distractors::mine_distractors(latents, mine_cfg);
    for (const auto& warning : mined.warnings) {
      std::cerr << "warning: " << warning << "\n";
    }
    for (const auto& set : mined.sets) {
      manifest.by_id(set.reference_id).distractors =
          datasets::DistractorRefs{{set.hard_ids[0], set.hard_ids[1]}, set.easy_id};
    }
    manifest.meta["mining"] = {{"ae", mine_ae},
                               {"seed", mine_cfg.seed},
                               {"quantile", mine_cfg.easy_quantile},
                               {"warnings", mined.warnings}};
    datasets::save_manifest(manifest, mine_out);
    std::cout << "mined distractors for " << mined.sets.size() << " shapes\nwrote "
              << mine_out << "\n";
  });

  // ---- build-triplets ----
  auto* bt = app.add_subcommand("build-triplets", "build scoring groups per split");
  std::string bt_manifest, bt_out;
  Index bt_group = 2, bt_train_group = 4;
  std::uint64_t bt_seed = 0;
  bt->set_config("--config");
  bt->add_option("--manifest", bt_manifest, "mined dataset manifest")->required();
  bt->add_option("--out", bt_out, "output directory")->required();
  bt->add_option("--group-size", bt_group, "group size for val/test triplets");
  bt->add_option("--train-group-size", bt_train_group,
                 "group size stored for training triplets (subsampled by train-cc)");
  bt->add_option("--seed", bt_seed, "seed");
  bt->callback([&] {
    const auto manifest = datasets::load_manifest(bt_manifest);
    fs::create_directories(bt_out);
    for (const std::string split : {"train", "val", "test"}) {
      std::vector<distractors::DistractorSet> sets;
      std::map<std::string, std::vector<std::string>> captions;
      for (const auto* rec : manifest.split_records(split)) {
        if (!rec->distractors) continue;
        sets.push_back(distractors::DistractorSet{
            rec->id,
            {rec->distractors->hard[0], rec->distractors->hard[1]},
            rec->distractors->easy,
            rec->class_label});
        captions[rec->id] = rec->captions;
      }
      const Index g = split == "train" ? bt_train_group : bt_group;
      const auto built = distractors::build_triplets(sets, captions, g,
                                                     bt_seed ^ fnv1a64(split));
      for (const auto& warning : built.warnings) std::cerr << "warning: " << warning << "\n";
      const std::string path = (fs::path(bt_out) / ("triplets_" + split + ".jsonl")).string();
      model_io::save_triplets(built.triplets, path,
                              {{"split", split}, {"group_size", g}, {"seed", bt_seed}});
      std::cout << split << ": " << built.triplets.size() << " triplets -> " << path << "\n";
    }
  });

  // ---- train-cc ----
  auto* tcc = app.add_subcommand("train-cc", "train the coherence scorer");
  std::string tcc_manifest, tcc_triplets_dir, tcc_ae, tcc_out;
  std::string tcc_provider = "builtin", tcc_embeddings, tcc_preset = "desk";
  Index tcc_d_text = 64, tcc_text_heads = 2;
  bool tcc_freeze_text = false, tcc_unfreeze_encoder = false;
  crosscoherence::FitConfig fit_cfg;
  fit_cfg.epochs = 60;
  tcc->set_config("--config");
  tcc->add_option("--manifest", tcc_manifest, "dataset manifest")->required();
  tcc->add_option("--triplets", tcc_triplets_dir, "triplet directory")->required();
  tcc->add_option("--ae", tcc_ae, "autoencoder checkpoint (encoder init)")->required();
  tcc->add_option("--out", tcc_out, "output checkpoint path")->required();
  tcc->add_option("--provider", tcc_provider, "text provider")
      ->check(CLI::IsMember({"builtin", "file"}));
  tcc->add_option("--embeddings", tcc_embeddings, "TEMB1 file for --provider file");
  tcc->add_option("--preset", tcc_preset, "scorer size preset")
      ->check(CLI::IsMember({"desk", "full"}));
  tcc->add_option("--d-text", tcc_d_text, "builtin provider embedding width");
  tcc->add_option("--text-heads", tcc_text_heads, "builtin provider attention heads");
  tcc->add_flag("--freeze-text", tcc_freeze_text, "freeze the builtin text provider");
  tcc->add_flag("--unfreeze-encoder", tcc_unfreeze_encoder,
                "fine-tune the point-cloud encoder");
  tcc->add_option("--epochs", fit_cfg.epochs, "max training epochs");
  tcc->add_option("--batch", fit_cfg.batch, "batch size");
  tcc->add_option("--lr", fit_cfg.lr, "learning rate");
  tcc->add_option("--group-size", fit_cfg.group_size, "training group size");
  tcc->add_option("--patience", fit_cfg.patience, "early stop patience");
  tcc->add_option("--seed", fit_cfg.seed, "seed");
  tcc->callback([&] {
    const auto manifest = datasets::load_manifest(tcc_manifest);
    const datasets::CloudStore store(manifest,
                                     datasets::manifest_directory(tcc_manifest));
    json ae_meta;
    const auto ae = model_io::load_autoencoder(tcc_ae, &ae_meta);

    const auto train = model_io::load_triplets(
        (fs::path(tcc_triplets_dir) / "triplets_train.jsonl").string());
    const auto val = model_io::load_triplets(
        (fs::path(tcc_triplets_dir) / "triplets_val.jsonl").string());

    std::shared_ptr<encoders::TextProvider> provider;
    if (tcc_provider == "builtin") {
      std::vector<std::string> corpus;
      for (const auto* rec : manifest.split_records("train")) {
        for (const auto& c : rec->captions) corpus.push_back(c);
      }
      encoders::BuiltinTextProvider::Config pc;
      pc.d_text = tcc_d_text;
      pc.heads = tcc_text_heads;
      pc.frozen = tcc_freeze_text;
      pc.seed = fit_cfg.seed + 1;
      provider = std::make_shared<encoders::BuiltinTextProvider>(
          encoders::Vocabulary::build(corpus), pc);
    } else {
      check(!tcc_embeddings.empty(), "--provider file needs --embeddings");
      provider = std::make_shared<encoders::FileBackedTextProvider>(tcc_embeddings);
    }

    const auto scorer_cfg = tcc_preset == "desk" ? model_io::desk_scorer_config()
                                                 : crosscoherence::ScorerConfig{};
    crosscoherence::CrossCoherenceModel model(ae.encoder.cfg, provider, scorer_cfg);
    model.encoder_frozen = !tcc_unfreeze_encoder;
    // reconstruction-trained weights initialize the encoder
    for (std::size_t i = 0; i < model.encoder.params().size(); ++i) {
      model.encoder.params()[i]->value =
          const_cast<encoders::AutoencoderParams&>(ae).encoder.params()[i]->value;
    }
    Rng rng(fit_cfg.seed);
    model.scorer.init(rng);

    const auto result = crosscoherence::fit(
        model, [&](const std::string& id) -> const geometry::ColoredPointCloud& {
          return store.get(id);
        },
        train, val, fit_cfg);

    json history = json::array();
    for (const auto& e : result.history) {
      history.push_back({{"epoch", e.epoch},
                         {"train_loss", e.train_loss},
                         {"val_accuracy", e.val_accuracy}});
    }
    json run_meta = {{"command", "train-cc"},
                     {"manifest", tcc_manifest},
                     {"ae", tcc_ae},
                     {"provider", tcc_provider},
                     {"epochs", fit_cfg.epochs},
                     {"batch", fit_cfg.batch},
                     {"lr", fit_cfg.lr},
                     {"group_size", fit_cfg.group_size},
                     {"patience", fit_cfg.patience},
                     {"seed", fit_cfg.seed},
                     {"unfreeze_encoder", tcc_unfreeze_encoder},
                     {"history", history},
                     {"best_epoch", result.best_epoch},
                     {"best_val_accuracy", result.best_val_accuracy}};
    model_io::save_model(model, tcc_out, run_meta);
    std::cout << "trained " << result.history.size() << " epochs, best val accuracy "
              << result.best_val_accuracy << " at epoch " << result.best_epoch
              << "\nwrote " << tcc_out << "\n";
  });

  // ---- eval-pairwise ----
  auto* ep = app.add_subcommand("eval-pairwise", "reference-vs-distractor protocol");
  std::string ep_manifest, ep_triplets, ep_out, ep_name = "pairwise";
  ScorerChoice ep_scorer;
  int ep_workers = 1;
  ep->set_config("--config");
  ep->add_option("--manifest", ep_manifest, "dataset manifest")->required();
  ep->add_option("--triplets", ep_triplets, "triplet file (group size 2)")->required();
  ep->add_option("--out", ep_out, "report output path");
  ep->add_option("--name", ep_name, "report name");
  ep->add_option("--workers", ep_workers, "parallel workers");
  add_scorer_options(ep, ep_scorer);
  ep->callback([&] {
    const auto manifest = datasets::load_manifest(ep_manifest);
    const datasets::CloudStore store(manifest, datasets::manifest_directory(ep_manifest));
    const auto triplets = model_io::load_triplets(ep_triplets);
    auto scorer = make_scorer(ep_scorer, manifest, store);
    auto report = protocols::eval_pairwise(
        scorer.fn, triplets,
        [&](const std::string& id) -> const geometry::ColoredPointCloud& {
          return store.get(id);
        },
        ep_workers);
    report.config["name"] = ep_name;
    report.config["triplets"] = ep_triplets;
    report.config.update(scorer.echo);
    if (!ep_out.empty()) protocols::save_report(report, ep_out);
    std::cout << protocols::render_report_table({report});
  });

  // ---- eval-rprecision ----
  auto* er = app.add_subcommand("eval-rprecision", "caption-retrieval protocol");
  std::string er_manifest, er_out, er_name = "rprecision", er_split = "test";
  Index er_set_size = 153, er_repeats = 1, er_texts_per_shape = 1;
  std::uint64_t er_seed = 0;
  ScorerChoice er_scorer;
  int er_workers = 1;
  er->set_config("--config");
  er->add_option("--manifest", er_manifest, "dataset manifest")->required();
  er->add_option("--split", er_split, "evaluation split");
  er->add_option("--set-size", er_set_size, "texts per retrieval set");
  er->add_option("--seed", er_seed, "distractor sampling seed");
  er->add_option("--repeats", er_repeats, "resampling repeats (accuracy averaged)");
  er->add_option("--texts-per-shape", er_texts_per_shape, "ground-truth captions per shape");
  er->add_option("--out", er_out, "report output path");
  er->add_option("--name", er_name, "report name");
  er->add_option("--workers", er_workers, "parallel workers");
  add_scorer_options(er, er_scorer);
  er->callback([&] {
    const auto manifest = datasets::load_manifest(er_manifest);
    const datasets::CloudStore store(manifest, datasets::manifest_directory(er_manifest));
    std::vector<protocols::RPrecisionPair> pairs;
    std::vector<std::string> pool;
    for (const auto* rec : manifest.split_records(er_split)) {
      for (Index c = 0; c < er_texts_per_shape &&
                        c < static_cast<Index>(rec->captions.size());
           ++c) {
        pairs.push_back({rec->id, rec->captions[static_cast<std::size_t>(c)]});
        pool.push_back(rec->captions[static_cast<std::size_t>(c)]);
      }
    }
    auto scorer = make_scorer(er_scorer, manifest, store);
    auto report = protocols::eval_rprecision(
        scorer.fn, pairs,
        [&](const std::string& id) -> const geometry::ColoredPointCloud& {
          return store.get(id);
        },
        pool, er_set_size, er_seed, er_repeats, er_workers);
    report.config["name"] = er_name;
    report.config["split"] = er_split;
    report.config.update(scorer.echo);
    if (!er_out.empty()) protocols::save_report(report, er_out);
    std::cout << protocols::render_report_table({report});
  });

  // ---- refine ----
  auto* rf = app.add_subcommand("refine", "rephrase captions through a completion provider");
  std::string rf_manifest, rf_out, rf_cache, rf_provider = "mock", rf_template_file;
  refine::HttpProviderConfig rf_http;
  int rf_workers = 1;
  rf->set_config("--config");
  rf->add_option("--manifest", rf_manifest, "dataset manifest")->required();
  rf->add_option("--out", rf_out, "refined captions output file")->required();
  rf->add_option("--cache", rf_cache, "prompt cache directory");
  rf->add_option("--provider", rf_provider, "completion provider")
      ->check(CLI::IsMember({"mock", "live"}));
  rf->add_option("--template-file", rf_template_file, "request template override");
  rf->add_option("--url", rf_http.url, "completion endpoint (live)");
  rf->add_option("--model", rf_http.model, "model name (live)");
  rf->add_option("--api-key-env", rf_http.api_key_env, "env var holding the API key");
  rf->add_option("--rpm", rf_http.requests_per_minute, "request rate limit");
  rf->add_option("--max-retries", rf_http.max_retries, "retry budget");
  rf->add_option("--workers", rf_workers, "parallel workers");
  rf->callback([&] {
    const auto manifest = datasets::load_manifest(rf_manifest);
    refine::RefineConfig cfg;
    cfg.workers = rf_workers;
    if (!rf_template_file.empty()) {
      cfg.request_template = io::read_text_file(rf_template_file);
    }

    std::unique_ptr<refine::CompletionProvider> provider;
    if (rf_provider == "mock") {
      provider = std::make_unique<refine::MockCompletionProvider>();
    } else {
      check(!rf_http.url.empty(), "--provider live needs --url");
      provider = std::make_unique<refine::HttpCompletionProvider>(rf_http);
    }
    std::unique_ptr<refine::PromptCache> cache;
    if (!rf_cache.empty()) cache = std::make_unique<refine::PromptCache>(rf_cache);

    const auto run = refine::refine_captions(manifest, *provider, cache.get(), cfg);

    std::string out;
    json header = {{"schema", "ccbench.refined"},
                   {"version", 1},
                   {"meta",
                    {{"provider", provider->id()},
                     {"provider_calls", run.provider_calls},
                     {"cache_hits", run.cache_hits},
                     {"errors", run.errors}}}};
    out += header.dump() + "\n";
    for (const auto& [id, result] : run.results) {
      json j = {{"id", id},
                {"captions", result.refined_captions},
                {"provider", result.provider_id},
                {"cached", result.cached}};
      out += j.dump() + "\n";
    }
    io::write_text_file(rf_out, out);
    std::cout << "refined " << run.results.size() << " shapes ("
              << run.cache_hits << " cache hits, " << run.provider_calls
              << " provider calls, " << run.errors.size() << " errors)\nwrote "
              << rf_out << "\n";
    for (const auto& e : run.errors) std::cerr << "error record: " << e << "\n";
  });

  // ---- report ----
  auto* rp = app.add_subcommand("report", "render evaluation reports as a table");
  std::vector<std::string> rp_files;
  rp->add_option("files", rp_files, "report JSON files")->required();
  rp->callback([&] {
    std::vector<protocols::EvalReport> reports;
    for (const auto& f : rp_files) reports.push_back(protocols::load_report(f));
    std::cout << protocols::render_report_table(reports);
  });

  CLI11_PARSE(app, argc, argv);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
