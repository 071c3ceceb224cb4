// Command-line front end: corpus synthesis, feature generation, training,
// evaluation and the search server.

#include <csignal>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>

#include <CLI11.hpp>

#include "t2m/service.hpp"
#include "t2m/t2m.hpp"

namespace {

using namespace t2m;

Split split_option(const std::string& s) {
  const auto split = parse_split(s);
  if (split == Split::kUnset) throw InvalidArgument("--split must be train, val or test");
  return split;
}

int run_scenes(std::size_t count, std::uint64_t seed, std::size_t min_groups, std::size_t max_groups,
               const std::string& out) {
  SyntheticSceneOptions opts;
  opts.min_groups = min_groups;
  opts.max_groups = max_groups;
  write_scene_catalog(out, synthetic_scene_catalog(count, seed, opts));
  std::cout << "wrote " << count << " scenes to " << out << '\n';
  return 0;
}

int run_synth(const std::string& scenes_path, const std::string& paintings_path, std::uint64_t seed,
              const std::string& out, int pair_cap) {
  const auto scenes = load_scene_catalog(scenes_path);
  const auto paintings = load_painting_catalog(paintings_path);
  CorpusOptions opts;
  if (pair_cap >= 0)
    opts.pair_cap = static_cast<std::size_t>(pair_cap);
  else
    opts.pair_cap.reset();
  const auto corpus = build_corpus(scenes, paintings, seed, opts);
  write_corpus(out, corpus);
  const auto counts = split_counts(scenes.size());
  std::cout << "wrote " << corpus.size() << " metaverses (" << scenes.size() << " scenes x " << paintings.size()
            << " paintings; scene split " << counts.train << "/" << counts.val << "/" << counts.test << ") to "
            << out << '\n';
  return 0;
}

int run_stats(const std::string& corpus_path) {
  std::cout << to_json(corpus_stats(load_corpus(corpus_path))).dump(2) << '\n';
  return 0;
}

int run_embed(const std::string& corpus_path, const std::string& mode, const std::string& input, std::uint64_t seed,
              bool informative, double noise, const std::string& out) {
  const auto corpus = load_corpus(corpus_path);
  BundleMap bundles;
  if (mode == "import") {
    if (input.empty()) throw InvalidArgument("--mode import needs --input <bundles.jsonl>");
    std::ifstream in(input);
    if (!in) throw InvalidArgument("cannot open " + input);
    bundles = select_bundles(read_bundle_jsonl(in, input), corpus);
  } else {
    bundles = synthesize_bundles(corpus, {seed, informative, noise});
  }
  store_bundles(out, bundles, corpus);
  std::cout << "wrote " << bundles.size() << " bundles to " << out << " (+ " << out << ".json)\n";
  return 0;
}

struct TrainArgs {
  std::string corpus, emb, mum = "lf", tum = "bigru", out, log;
  std::uint64_t seed = 0;
  TrainConfig cfg;
  EncoderConfig enc;
};

int run_train(TrainArgs a) {
  const auto corpus = load_corpus(a.corpus);
  const auto bundles = load_bundles(a.emb, corpus);
  a.enc.fusion = parse_fusion_mode(a.mum);
  a.enc.sequence = parse_sequence_variant(a.tum);
  a.cfg.seed = a.seed;
  const TwoTowerModel<float> model(a.enc, a.seed);
  const auto train_set = filter_split(corpus, Split::kTrain);
  const auto val_set = filter_split(corpus, Split::kVal);
  std::cout << "training " << to_string(a.enc.fusion) << "+" << to_string(a.enc.sequence) << " on "
            << train_set.size() << " metaverses, validating on " << val_set.size() << '\n';
  auto result = train(model, train_set, val_set, bundles, a.cfg, [](const EpochLog& e) {
    std::cout << "epoch " << e.epoch << " lr " << e.lr << " loss " << e.train_loss << " val R@1 " << e.val_r1
              << " MedR " << e.val_medr << std::endl;
  });
  nlohmann::json meta = {{"train", to_json(a.cfg)}, {"best_epoch", result.best_epoch},
                         {"val_r1", result.log[static_cast<std::size_t>(result.best_epoch - 1)].val_r1}};
  save_checkpoint(a.out, result.best, meta);
  const auto log_path = a.log.empty() ? a.out + ".log.csv" : a.log;
  std::ofstream log(log_path);
  write_log_csv(log, result.log);
  std::cout << "best epoch " << result.best_epoch << "; checkpoint " << a.out << ", log " << log_path << '\n';
  return 0;
}

int run_eval(const std::string& ckpt, const std::string& corpus_path, const std::string& emb,
             const std::string& split, const std::string& report_path, std::size_t max_queries, bool brute) {
  const auto ck = load_checkpoint(ckpt);
  const auto corpus = load_corpus(corpus_path);
  const auto records = filter_split(corpus, split_option(split));
  const auto bundles = load_bundles(emb, records);
  EvalOptions opts;
  opts.max_queries = max_queries;
  const auto report = brute ? brute_force_evaluate(ck.model, records, bundles, opts)
                            : evaluate(ck.model, records, bundles, opts);
  const auto j = to_json(report);
  if (!report_path.empty()) {
    std::ofstream out(report_path);
    if (!out) throw Error("cannot write '" + report_path + "'");
    out << j.dump(2) << '\n';
  }
  for (const auto& [k, v] : report.r_at) std::cout << "R@" << k << " " << v << "  ";
  std::cout << "MedR " << report.med_r << "  MR " << round1(report.mean_r) << "  (" << report.per_query_ranks.size()
            << " queries, gallery " << report.gallery_size << ")\n";
  return 0;
}

httplib::Server* g_server = nullptr;

int run_serve(const std::string& ckpt, const std::string& corpus_path, const std::string& emb, int port,
              const std::string& host, const std::string& encoder_url, const std::string& split,
              const std::string& paintings_path, std::uint64_t hash_seed) {
  const auto ck = load_checkpoint(ckpt);
  const auto corpus = load_corpus(corpus_path);
  const auto gallery = filter_split(corpus, split_option(split));
  const auto bundles = load_bundles(emb, gallery);
  std::vector<PaintingRecord> paintings;
  if (!paintings_path.empty()) paintings = load_painting_catalog(paintings_path);
  std::shared_ptr<const SentenceEncoder> encoder;
  if (encoder_url.empty())
    encoder = std::make_shared<HashingEncoder>(hash_seed);
  else
    encoder = std::make_shared<RemoteEncoder>(encoder_url);
  const SearchService service(ck.model, corpus, gallery, bundles, encoder, paintings);

  httplib::Server server;
  register_routes(server, service);
  g_server = &server;
  std::signal(SIGINT, [](int) {
    if (g_server) g_server->stop();
  });
  std::cout << "serving " << service.gallery_size() << " metaverses on http://" << host << ":" << port
            << (encoder_url.empty() ? " (hashing sentence embedder, lexical only)" : "") << std::endl;
  if (!server.listen(host, port)) throw Error("cannot listen on " + host + ":" + std::to_string(port));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Text-to-Metaverse retrieval toolkit"};
  app.require_subcommand(1);

  std::size_t scene_count = 100, min_groups = 3, max_groups = 9;
  std::uint64_t seed = 0;
  std::string out;
  auto* scenes = app.add_subcommand("scenes", "Write a synthetic scene catalog");
  scenes->add_option("--count", scene_count, "Number of scenes")->required();
  scenes->add_option("--seed", seed, "Generator seed");
  scenes->add_option("--min-groups", min_groups, "Minimum furniture groups per scene");
  scenes->add_option("--max-groups", max_groups, "Maximum furniture groups per scene");
  scenes->add_option("--out", out, "Output scene catalog (JSON lines)")->required();

  std::string scenes_path, paintings_path = std::string(T2M_DATA_DIR) + "/paintings.json";
  int pair_cap = 30;
  auto* synth = app.add_subcommand("synth", "Pair scenes with paintings and generate descriptions");
  synth->add_option("--scenes", scenes_path, "Scene catalog (JSON lines)")->required();
  synth->add_option("--paintings", paintings_path, "Painting catalog (JSON array)");
  synth->add_option("--seed", seed, "Split seed")->required();
  synth->add_option("--out", out, "Output corpus (JSON lines)")->required();
  synth->add_option("--pair-cap", pair_cap, "Positional sentences per scene; negative keeps all pairs");

  std::string corpus_path;
  auto* stats = app.add_subcommand("stats", "Token and sentence statistics of a corpus");
  stats->add_option("--corpus", corpus_path, "Corpus (JSON lines)")->required();

  std::string mode = "synthetic";
  bool informative = false;
  double noise = 0.1;
  auto* embed = app.add_subcommand("embed", "Generate feature bundles for a corpus");
  embed->add_option("--corpus", corpus_path, "Corpus (JSON lines)")->required();
  embed->add_option("--mode", mode, "Feature provider")->check(CLI::IsMember({"synthetic", "import"}));
  std::string import_path;
  embed->add_option("--input", import_path, "JSON-lines bundles to import (--mode import)");
  embed->add_option("--seed", seed, "Provider seed");
  embed->add_flag("--informative", informative, "Correlate sentence features with their Metaverse");
  embed->add_option("--noise", noise, "Sentence noise magnitude")->check(CLI::NonNegativeNumber);
  embed->add_option("--out", out, "Output .emb file")->required();

  TrainArgs ta;
  auto* trn = app.add_subcommand("train", "Train a two-tower model");
  trn->add_option("--corpus", ta.corpus, "Corpus (JSON lines)")->required();
  trn->add_option("--emb", ta.emb, "Feature bundles (.emb)")->required();
  trn->add_option("--mum", ta.mum, "Metaverse encoder fusion")->check(CLI::IsMember({"lf", "ef"}));
  trn->add_option("--tum", ta.tum, "Description encoder")
      ->check(CLI::IsMember({"mean", "gru", "bigru", "lstm", "bilstm"}));
  trn->add_option("--seed", ta.seed, "Seed for init, shuffling and dropout");
  trn->add_option("--out", ta.out, "Output checkpoint")->required();
  trn->add_option("--log", ta.log, "Training log CSV (default <out>.log.csv)");
  trn->add_option("--batch-size", ta.cfg.batch_size, "Batch size");
  trn->add_option("--margin", ta.cfg.margin, "Triplet margin");
  trn->add_option("--epochs", ta.cfg.epochs, "Epochs");
  trn->add_option("--lr", ta.cfg.lr, "Initial learning rate");
  trn->add_option("--lr-drop-epoch", ta.cfg.lr_drop_epoch, "Last epoch at the initial learning rate");
  trn->add_option("--lr-drop-factor", ta.cfg.lr_drop_factor, "Fractional learning-rate reduction");
  trn->add_option("--hidden1", ta.enc.hidden1, "FCNet first hidden width");
  trn->add_option("--hidden2", ta.enc.hidden2, "FCNet second hidden width");
  trn->add_option("--dropout1", ta.enc.dropout1, "FCNet first dropout probability");
  trn->add_option("--dropout2", ta.enc.dropout2, "FCNet second dropout probability");

  std::string ckpt, emb, split = "test", report;
  std::size_t max_queries = 0;
  bool brute = false;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
  ev->add_option("--ckpt", ckpt, "Checkpoint")->required();
  ev->add_option("--corpus", corpus_path, "Corpus (JSON lines)")->required();
  ev->add_option("--emb", emb, "Feature bundles (.emb)")->required();
  ev->add_option("--split", split, "Split to evaluate")->check(CLI::IsMember({"train", "val", "test"}));
  ev->add_option("--report", report, "Output report (JSON)");
  ev->add_option("--max-queries", max_queries, "Limit the number of queries (0 = all)");
  ev->add_flag("--brute-force", brute, "Use the naive per-query sort");

  int port = 8080;
  std::string host = "127.0.0.1", encoder_url, serve_paintings;
  std::uint64_t hash_seed = 0;
  auto* srv = app.add_subcommand("serve", "Serve free-text search over HTTP");
  srv->add_option("--ckpt", ckpt, "Checkpoint")->required();
  srv->add_option("--corpus", corpus_path, "Corpus (JSON lines)")->required();
  srv->add_option("--emb", emb, "Feature bundles (.emb)")->required();
  srv->add_option("--port", port, "Port")->required();
  srv->add_option("--host", host, "Bind address");
  srv->add_option("--encoder-url", encoder_url, "External sentence encoder endpoint");
  srv->add_option("--split", split, "Split to index")->check(CLI::IsMember({"train", "val", "test"}));
  srv->add_option("--paintings", serve_paintings, "Painting catalog for display names");
  srv->add_option("--hash-seed", hash_seed, "Seed of the hashing sentence embedder");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*scenes) return run_scenes(scene_count, seed, min_groups, max_groups, out);
    if (*synth) return run_synth(scenes_path, paintings_path, seed, out, pair_cap);
    if (*stats) return run_stats(corpus_path);
    if (*embed) return run_embed(corpus_path, mode, import_path, seed, informative, noise, out);
    if (*trn) return run_train(ta);
    if (*ev) return run_eval(ckpt, corpus_path, emb, split, report, max_queries, brute);
    if (*srv) return run_serve(ckpt, corpus_path, emb, port, host, encoder_url, split, serve_paintings, hash_seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
