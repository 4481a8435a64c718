// srfc command-line driver: synth, ingest, pretrain-classifier, train,
// generate, score, eval.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "srfc/srfc.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace srfc;

namespace {

// Name of the step currently running; reported on failure.
std::string g_stage = "startup";

void stage(std::string s) { g_stage = std::move(s); }

json read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(path + ": malformed JSON: " + e.what());
  }
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    out.push_back(line);
  }
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::string resolve_data(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("SRFC_DATA_DIR"); env && *env) return env;
  throw std::runtime_error("no --data given and SRFC_DATA_DIR is unset");
}

std::array<double, 3> parse_fractions(const std::string& s) {
  std::array<double, 3> f{};
  std::stringstream ss(s);
  std::string part;
  std::size_t i = 0;
  while (std::getline(ss, part, ',')) {
    if (i >= 3) throw std::invalid_argument("--split expects three comma-separated fractions");
    f[i++] = std::stod(part);
  }
  if (i != 3) throw std::invalid_argument("--split expects three comma-separated fractions");
  return f;
}

// Flags override config fields of the same name (dashes for underscores).
// Values are parsed as JSON so numbers and booleans keep their types, and a
// bare word falls back to a string.
json apply_overrides(json cfg, const std::map<std::string, std::string>& set) {
  for (const auto& [key, raw] : set) {
    if (raw.empty()) continue;
    json v;
    try {
      v = json::parse(raw);
    } catch (const json::parse_error&) {
      v = raw;
    }
    cfg[key] = v;
  }
  return cfg;
}

void check_vocab(const Vocab& a, const Vocab& b, const std::string& what) {
  if (!(a == b))
    throw std::runtime_error(what + ": vocabulary does not match the dataset (" +
                             std::to_string(a.size()) + " vs " + std::to_string(b.size()) +
                             " tokens)");
}

struct Options {
  // synth
  int items = 2000, categories = 20, attributes = 60, attrs_per_item = 3, pool = 10;
  int grid_cells = 4, feature_dim = 32, images_per_caption = 1;
  double noise = 0.0;
  // shared
  std::uint64_t seed = 7;
  std::string out, data, config, split = "0.8,0.1,0.1";
  int vocab_min_count = 1;
  // ingest
  std::string input, lexicon, aliases;
  int min_attr_items = 10, min_cat_items = 200;
  // train
  std::map<std::string, std::string> train_set;
  std::map<std::string, std::string> clf_set;
  // generate
  std::string model, subset = "test", refs_out, labels_out;
  int max_len = 25;
  // score / eval
  std::string generated, reference, attr_file, classifier, cats_file, labels, plot;
};

int cmd_synth(const Options& o) {
  stage("synth: config");
  SynthConfig sc;
  sc.n_items = o.items;
  sc.n_categories = o.categories;
  sc.n_attributes = o.attributes;
  sc.attributes_per_item = o.attrs_per_item;
  sc.pool_size = o.pool;
  sc.grid_cells = o.grid_cells;
  sc.feature_dim = o.feature_dim;
  sc.feature_noise = o.noise;
  sc.images_per_caption = o.images_per_caption;
  RunManifest man;
  man.command = "synth";
  man.started = utc_timestamp();
  man.seed = o.seed;
  man.set_config({{"items", sc.n_items},
                  {"categories", sc.n_categories},
                  {"attributes", sc.n_attributes},
                  {"attributes_per_item", sc.attributes_per_item},
                  {"pool_size", sc.pool_size},
                  {"grid_cells", sc.grid_cells},
                  {"feature_dim", sc.feature_dim},
                  {"noise", sc.feature_noise},
                  {"images_per_caption", sc.images_per_caption},
                  {"split", o.split},
                  {"vocab_min_count", o.vocab_min_count},
                  {"seed", o.seed}});
  stage("synth: generate");
  SynthCorpus corpus = generate_synthetic_corpus(sc, o.seed);
  const fs::path out(o.out);
  fs::create_directories(out);
  stage("synth: write raw items");
  write_items_jsonl(corpus.items, (out / "raw.jsonl").string());
  corpus.lexicon.save((out / "lexicon.tsv").string());
  stage("synth: assemble dataset");
  LabeledCorpus lc{corpus.items, corpus.attributes, corpus.categories};
  Dataset ds = assemble_dataset(std::move(lc), parse_fractions(o.split), o.seed, o.vocab_min_count);
  save_dataset(ds, out);
  for (const char* f : {"raw.jsonl", "lexicon.tsv", "items.jsonl", "attributes.txt",
                        "categories.txt", "vocab.txt", "split.json"})
    man.artifacts.push_back((out / f).string());
  man.write(out / "manifest.json");
  std::cout << "synth: " << ds.items.size() << " items, " << ds.categories.size()
            << " categories, " << ds.attributes.size() << " attributes, vocab " << ds.vocab.size()
            << " -> " << o.out << '\n';
  return 0;
}

int cmd_ingest(const Options& o) {
  RunManifest man;
  man.command = "ingest";
  man.started = utc_timestamp();
  man.seed = o.seed;
  stage("ingest: read lexicon");
  const PosLexicon lex = PosLexicon::load(o.lexicon);
  LabelingConfig lcfg;
  lcfg.min_attribute_items = o.min_attr_items;
  lcfg.min_category_items = o.min_cat_items;
  if (!o.aliases.empty()) {
    stage("ingest: read aliases");
    const json a = read_json_file(o.aliases);
    if (!a.is_object()) throw std::runtime_error(o.aliases + ": expected an object of alias -> category");
    for (const auto& [k, v] : a.items()) {
      if (!v.is_string()) throw std::runtime_error(o.aliases + ": alias '" + k + "' must map to a string");
      lcfg.category_aliases[k] = v.get<std::string>();
    }
  }
  man.set_config({{"input", o.input},
                  {"lexicon", o.lexicon},
                  {"aliases", lcfg.category_aliases},
                  {"min_attr_items", o.min_attr_items},
                  {"min_cat_items", o.min_cat_items},
                  {"split", o.split},
                  {"vocab_min_count", o.vocab_min_count},
                  {"seed", o.seed}});
  man.inputs = {o.input, o.lexicon};
  stage("ingest: read items");
  std::vector<Item> items = read_items_jsonl(o.input);
  stage("ingest: label");
  LabeledCorpus lc = label_items(std::move(items), lex, lcfg);
  if (lc.items.empty()) throw std::runtime_error("no items survive the category threshold");
  for (const auto& it : lc.items)
    if (it.features.empty())
      throw std::runtime_error("item '" + it.id + "' has no features; training needs them");
  stage("ingest: split");
  Dataset ds = assemble_dataset(std::move(lc), parse_fractions(o.split), o.seed, o.vocab_min_count);
  stage("ingest: write");
  save_dataset(ds, o.out);
  for (const char* f : {"items.jsonl", "attributes.txt", "categories.txt", "vocab.txt", "split.json"})
    man.artifacts.push_back((fs::path(o.out) / f).string());
  man.write(fs::path(o.out) / "manifest.json");
  std::cout << "ingest: " << ds.items.size() << " items, " << ds.categories.size()
            << " categories, " << ds.attributes.size() << " attributes -> " << o.out << '\n';
  return 0;
}

ClassifierTrainConfig classifier_config(const Options& o, json* resolved) {
  json cfg = ClassifierTrainConfig{};
  if (!o.config.empty()) {
    const json file = read_json_file(o.config);
    for (const auto& [k, v] : file.items()) cfg[k] = v;
  }
  cfg = apply_overrides(cfg, o.clf_set);
  ClassifierTrainConfig c = cfg.get<ClassifierTrainConfig>();
  if (resolved) *resolved = cfg;
  return c;
}

int cmd_pretrain(const Options& o) {
  RunManifest man;
  man.command = "pretrain-classifier";
  man.started = utc_timestamp();
  stage("pretrain-classifier: config");
  json resolved;
  const ClassifierTrainConfig cfg = classifier_config(o, &resolved);
  man.set_config(resolved);
  man.seed = cfg.seed;
  stage("pretrain-classifier: load data");
  const std::string data = resolve_data(o.data);
  man.inputs = {data};
  const Dataset ds = load_dataset(data);
  stage("pretrain-classifier: train");
  ClassifierReport rep;
  const TextCnnClassifier clf = pretrain_classifier(ds, cfg, &rep);
  stage("pretrain-classifier: write");
  const fs::path out(o.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_classifier(clf, ds, out.string());
  const json report = {{"test_acc", rep.test_acc},
                       {"val_acc", rep.val_acc},
                       {"epoch_loss", rep.epoch_loss},
                       {"first_batch_loss", rep.first_batch_loss}};
  const fs::path report_path = out.string() + ".report.json";
  write_text(report_path, report.dump(2) + "\n");
  man.artifacts = {out.string(), report_path.string()};
  man.write(out.string() + ".manifest.json");
  std::cout << report.dump() << '\n';
  return 0;
}

int cmd_train(const Options& o) {
  RunManifest man;
  man.command = "train";
  man.started = utc_timestamp();
  stage("train: config");
  json cfg_json = TrainConfig{};
  if (!o.config.empty()) {
    const json file = read_json_file(o.config);
    if (!file.is_object()) throw std::runtime_error(o.config + ": expected a JSON object");
    for (const auto& [k, v] : file.items()) cfg_json[k] = v;
  }
  cfg_json = apply_overrides(cfg_json, o.train_set);
  TrainConfig cfg = cfg_json.get<TrainConfig>();
  validate(cfg);
  man.set_config(cfg_json);
  man.seed = cfg.seed;
  stage("train: load data");
  const std::string data = resolve_data(o.data);
  man.inputs = {data};
  const Dataset ds = load_dataset(data);
  if (ds.train().empty()) throw std::runtime_error("empty training split");
  const fs::path out(o.out);
  fs::create_directories(out);

  stage("train: classifier");
  std::optional<TextCnnClassifier> clf;
  if (!cfg.classifier.empty()) {
    LoadedClassifier lc = load_classifier(cfg.classifier);
    check_vocab(lc.vocab, ds.vocab, cfg.classifier);
    if (lc.categories != ds.categories.names())
      throw std::runtime_error(cfg.classifier + ": category set does not match the dataset");
    clf.emplace(std::move(lc.model));
    man.inputs.push_back(cfg.classifier);
  } else {
    ClassifierTrainConfig ccfg;
    ccfg.seed = mix_seed(cfg.seed, {99});
    clf.emplace(pretrain_classifier(ds, ccfg));
    save_classifier(*clf, ds, (out / "classifier.ckpt").string());
    man.artifacts.push_back((out / "classifier.ckpt").string());
  }

  stage("train: fit");
  Captioner model(captioner_config(cfg, ds));
  Trainer trainer(model, ds, *clf, cfg);
  trainer.checkpoint_dir = out / "checkpoints";
  std::ofstream csv(out / "metrics.csv", std::ios::binary);
  if (!csv) throw std::runtime_error("cannot write " + (out / "metrics.csv").string());
  csv << metrics_csv_header() << '\n';
  trainer.on_epoch = [&csv](const EpochLog& e) {
    csv << metrics_csv_row(e) << '\n';
    csv.flush();
    std::cerr << "epoch " << e.epoch << " phase " << e.phase << " L_MLE " << e.l_mle
              << " val_reward " << e.val.reward << '\n';
  };
  const TrainResult res = trainer.run();
  csv.close();
  man.artifacts.push_back((out / "metrics.csv").string());
  for (const auto& c : res.checkpoints) man.artifacts.push_back(c);

  stage("train: held-out report");
  const auto test = ds.test().empty() ? ds.val() : ds.test();
  json report;
  std::vector<double> final_params = model.params().snapshot();
  model.params().restore(res.phase1_params);
  report["phase1"] = evaluate_captioner(model, test, ds, *clf, cfg.reward, cfg.max_len);
  model.params().restore(final_params);
  report["final"] = evaluate_captioner(model, test, ds, *clf, cfg.reward, cfg.max_len);
  report["phase1_epochs"] = res.phase1_epochs;
  report["phase2_epochs"] = res.phase2_epochs;
  write_text(out / "report.json", report.dump(2) + "\n");
  man.artifacts.push_back((out / "report.json").string());

  stage("train: plots");
  Series val_r{"val reward", {}, {}}, tr_als{"train r_ALS", {}, {}}, tr_sls{"train r_SLS", {}, {}};
  for (const auto& e : res.log) {
    val_r.x.push_back(e.epoch);
    val_r.y.push_back(e.val.reward);
    if (e.phase == 2) {
      tr_als.x.push_back(e.epoch);
      tr_als.y.push_back(e.train_r_als);
      tr_sls.x.push_back(e.epoch);
      tr_sls.y.push_back(e.train_r_sls);
    }
  }
  write_line_plot((out / "reward_curve.svg").string(), "reward by epoch", {val_r, tr_als, tr_sls});
  man.artifacts.push_back((out / "reward_curve.svg").string());
  man.write(out / "manifest.json");
  std::cout << report.dump() << '\n';
  return 0;
}

int cmd_generate(const Options& o) {
  RunManifest man;
  man.command = "generate";
  man.started = utc_timestamp();
  man.set_config({{"model", o.model}, {"split", o.subset}, {"max_len", o.max_len}});
  stage("generate: load data");
  const std::string data = resolve_data(o.data);
  const Dataset ds = load_dataset(data);
  man.inputs = {data, o.model};
  stage("generate: load model");
  const Checkpoint ck = read_checkpoint(o.model);
  if (ck.meta.value("model", "") != "captioner")
    throw std::runtime_error(o.model + ": not a captioner checkpoint");
  const auto ccfg = ck.meta.at("config").get<CaptionerConfig>();
  if (ccfg.vocab_size != ds.vocab.size())
    throw std::runtime_error(o.model + ": vocab size " + std::to_string(ccfg.vocab_size) +
                             " does not match the dataset's " + std::to_string(ds.vocab.size()));
  Captioner model(ccfg);
  load_checkpoint(model.params(), o.model);
  std::vector<const Item*> items;
  if (o.subset == "train") items = ds.train();
  else if (o.subset == "val") items = ds.val();
  else if (o.subset == "test") items = ds.test();
  else if (o.subset == "all")
    for (const auto& it : ds.items) items.push_back(&it);
  else throw std::invalid_argument("--split must be train, val, test or all");

  stage("generate: decode");
  std::ostringstream hyp, ref, lab;
  for (const Item* it : items) {
    hyp << join(decode(model.greedy_decode(it->features.tensor(), o.max_len), ds.vocab), " ") << '\n';
    ref << join(it->caption, " ") << '\n';
    json attrs = json::array();
    for (int a : it->attributes) attrs.push_back(join(ds.attributes.phrase(a), " "));
    lab << json{{"id", it->id}, {"category", ds.categories.name(it->category)}, {"attributes", attrs}}.dump()
        << '\n';
  }
  stage("generate: write");
  write_text(o.out, hyp.str());
  man.artifacts.push_back(o.out);
  if (!o.refs_out.empty()) {
    write_text(o.refs_out, ref.str());
    man.artifacts.push_back(o.refs_out);
  }
  if (!o.labels_out.empty()) {
    write_text(o.labels_out, lab.str());
    man.artifacts.push_back(o.labels_out);
  }
  man.write(o.out + ".manifest.json");
  std::cerr << "generate: " << items.size() << " captions -> " << o.out << '\n';
  return 0;
}

struct Labels {
  std::vector<std::string> categories;
  std::vector<std::vector<int>> attributes;
  bool has_attributes = false;
};

// Per-line labels: a JSON-lines file from `generate --labels`, or a plain
// file with one category name per line.
Labels read_labels(const Options& o, const AttributeVocab& attrs, std::size_t n) {
  Labels out;
  if (!o.labels.empty()) {
    const auto lines = read_lines(o.labels);
    for (std::size_t i = 0; i < lines.size(); ++i) {
      if (lines[i].empty()) continue;
      const std::string where = o.labels + ":" + std::to_string(i + 1);
      json j;
      try {
        j = json::parse(lines[i]);
      } catch (const json::parse_error& e) {
        throw ParseError(where + ": malformed JSON: " + e.what());
      }
      if (!j.contains("category") || !j["category"].is_string())
        throw ParseError(where + ": field 'category' missing or not a string");
      out.categories.push_back(j["category"].get<std::string>());
      std::vector<int> ids;
      for (const auto& a : j.value("attributes", json::array())) {
        const int id = attrs.id(tokenize(a.get<std::string>()));
        if (id < 0) throw ParseError(where + ": unknown attribute '" + a.get<std::string>() + "'");
        ids.push_back(id);
      }
      out.attributes.push_back(ids);
    }
    out.has_attributes = true;
  } else if (!o.cats_file.empty()) {
    for (const auto& l : read_lines(o.cats_file))
      if (!l.empty()) out.categories.push_back(l);
  }
  if (!out.categories.empty() && out.categories.size() != n)
    throw std::runtime_error("label file has " + std::to_string(out.categories.size()) +
                             " entries for " + std::to_string(n) + " captions");
  return out;
}

std::vector<TokenSeq> read_captions(const std::string& path) {
  std::vector<TokenSeq> out;
  for (const auto& l : read_lines(path)) out.push_back(tokenize(l));
  while (!out.empty() && out.back().empty()) out.pop_back();
  return out;
}

int category_id(const std::vector<std::string>& names, const std::string& name, std::size_t line) {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return static_cast<int>(i);
  throw std::runtime_error("line " + std::to_string(line + 1) + ": category '" + name +
                           "' unknown to the classifier");
}

int cmd_score(const Options& o) {
  stage("score: read inputs");
  const AttributeVocab attrs = load_attribute_vocab(o.attr_file);
  const auto gen = read_captions(o.generated);
  const auto ref = read_captions(o.reference);
  if (gen.size() != ref.size())
    throw std::runtime_error(std::to_string(gen.size()) + " generated captions for " +
                             std::to_string(ref.size()) + " references");
  std::optional<LoadedClassifier> clf;
  Labels labels;
  if (!o.classifier.empty()) {
    stage("score: load classifier");
    clf.emplace(load_classifier(o.classifier));
    labels = read_labels(o, attrs, gen.size());
    if (labels.categories.empty())
      throw std::runtime_error("--classifier needs --categories or --labels for r_SLS");
  }
  stage("score: compute");
  RewardConfig rc;
  for (std::size_t i = 0; i < gen.size(); ++i) {
    json line;
    if (gen[i].empty() || ref[i].empty()) {
      line["als"] = AttributeMatchReport{};
    } else {
      line["als"] = als_report(gen[i], ref[i], attrs);
    }
    double r_als = line["als"]["r_als"].get<double>();
    line["r_als"] = r_als;
    if (clf) {
      IdSeq ids;
      for (const auto& t : gen[i]) ids.push_back(clf->vocab.id(t));
      const double s = sls_reward(ids, category_id(clf->categories, labels.categories[i], i), clf->model);
      line["r_sls"] = s;
      line["r"] = combined_reward(r_als, s, rc);
    }
    std::cout << line.dump() << '\n';
  }
  return 0;
}

int cmd_eval(const Options& o) {
  RunManifest man;
  man.command = "eval";
  man.started = utc_timestamp();
  man.inputs = {o.generated, o.reference, o.attr_file};
  man.set_config({{"hyp", o.generated}, {"ref", o.reference}, {"attributes", o.attr_file},
                  {"classifier", o.classifier}, {"labels", o.labels}, {"categories", o.cats_file}});
  stage("eval: read inputs");
  const AttributeVocab attrs = load_attribute_vocab(o.attr_file);
  const auto hyp = read_captions(o.generated);
  const auto ref = read_captions(o.reference);
  if (hyp.size() != ref.size())
    throw std::runtime_error(std::to_string(hyp.size()) + " hypotheses for " +
                             std::to_string(ref.size()) + " references");
  const Labels labels = read_labels(o, attrs, hyp.size());
  stage("eval: metrics");
  EvalReport rep;
  rep.bleu4 = bleu4(hyp, ref);
  rep.rouge_l = rouge_l(hyp, ref);
  rep.cider = hyp.size() >= 2 ? cider(hyp, ref) : 0.0;
  std::vector<std::vector<int>> truth = labels.attributes;
  if (!labels.has_attributes) {
    // Without labels, the attributes mentioned in each reference are the truth.
    for (const auto& r : ref) {
      std::vector<int> ids;
      for (int a = 0; a < attrs.size(); ++a)
        if (contains_phrase(r, attrs.phrase(a))) ids.push_back(a);
      truth.push_back(ids);
    }
  }
  rep.map = attribute_map(hyp, truth, attrs);
  if (!o.classifier.empty()) {
    stage("eval: classifier");
    const LoadedClassifier clf = load_classifier(o.classifier);
    if (labels.categories.empty())
      throw std::runtime_error("--classifier needs --categories or --labels for ACC");
    std::vector<IdSeq> ids;
    std::vector<int> targets;
    for (std::size_t i = 0; i < hyp.size(); ++i) {
      IdSeq s;
      for (const auto& t : hyp[i]) s.push_back(clf.vocab.id(t));
      ids.push_back(s);
      targets.push_back(category_id(clf.categories, labels.categories[i], i));
    }
    rep.acc = category_acc(ids, targets, clf.model);
    rep.has_acc = true;
    man.inputs.push_back(o.classifier);
  }
  const json j = rep;
  std::cout << j.dump(2) << '\n';
  if (!o.plot.empty()) {
    stage("eval: plot");
    std::vector<std::pair<std::string, double>> bars = {
        {"BLEU-4", rep.bleu4}, {"ROUGE-L", rep.rouge_l}, {"CIDEr", rep.cider}, {"mAP", rep.map}};
    if (rep.has_acc) bars.emplace_back("ACC", rep.acc);
    if (o.plot.size() >= 4 && o.plot.substr(o.plot.size() - 4) == ".csv") {
      std::ostringstream csv;
      csv.precision(17);
      csv << "metric,value\n";
      for (const auto& [k, v] : bars) csv << k << ',' << v << '\n';
      write_text(o.plot, csv.str());
    } else {
      write_bar_plot(o.plot, "evaluation", bars);
    }
    man.artifacts.push_back(o.plot);
    man.write(o.plot + ".manifest.json");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semantic-reward fashion captioning"};
  app.require_subcommand(1);
  Options o;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic labeled corpus");
  synth->add_option("--items", o.items, "Number of items");
  synth->add_option("--categories", o.categories, "Number of categories");
  synth->add_option("--attributes", o.attributes, "Number of attributes");
  synth->add_option("--attributes-per-item", o.attrs_per_item);
  synth->add_option("--pool-size", o.pool, "Attributes available per category");
  synth->add_option("--grid-cells", o.grid_cells, "Feature grid cells (B)");
  synth->add_option("--feature-dim", o.feature_dim, "Feature dimension (D)");
  synth->add_option("--noise", o.noise, "Feature noise stddev");
  synth->add_option("--images-per-caption", o.images_per_caption);
  synth->add_option("--seed", o.seed);
  synth->add_option("--split", o.split, "train,val,test fractions");
  synth->add_option("--vocab-min-count", o.vocab_min_count);
  synth->add_option("--out", o.out, "Output dataset directory")->required();

  auto* ingest = app.add_subcommand("ingest", "Label raw JSON-lines items into a dataset");
  ingest->add_option("--input", o.input, "Items JSON-lines")->required();
  ingest->add_option("--lexicon", o.lexicon, "POS lexicon TSV")->required();
  ingest->add_option("--aliases", o.aliases, "JSON object of category aliases");
  ingest->add_option("--min-attr-items", o.min_attr_items);
  ingest->add_option("--min-cat-items", o.min_cat_items);
  ingest->add_option("--vocab-min-count", o.vocab_min_count)->default_val(5);
  ingest->add_option("--split", o.split);
  ingest->add_option("--seed", o.seed);
  ingest->add_option("--out", o.out)->required();

  auto* pre = app.add_subcommand("pretrain-classifier", "Train the text-CNN category classifier");
  pre->add_option("--data", o.data, "Dataset directory (default $SRFC_DATA_DIR)");
  pre->add_option("--config", o.config, "Classifier config JSON");
  pre->add_option("--out", o.out, "Checkpoint path")->required();
  for (const char* k : {"embed_dim", "filters", "windows", "dropout", "lr", "batch_size", "epochs", "seed"}) {
    std::string flag = std::string("--") + k;
    std::replace(flag.begin(), flag.end(), '_', '-');
    pre->add_option(flag, o.clf_set[k], "Overrides config field " + std::string(k));
  }

  auto* train = app.add_subcommand("train", "Two-phase captioner training");
  train->add_option("--config", o.config, "Run config JSON");
  train->add_option("--data", o.data, "Dataset directory (default $SRFC_DATA_DIR)");
  train->add_option("--out", o.out, "Run directory")->required();
  {
    const json fields = TrainConfig{};
    for (const auto& [k, v] : fields.items()) {
      std::string flag = "--" + k;
      std::replace(flag.begin(), flag.end(), '_', '-');
      train->add_option(flag, o.train_set[k], "Overrides config field " + k);
    }
  }

  auto* gen = app.add_subcommand("generate", "Greedy captions, one per line");
  gen->add_option("--model", o.model, "Captioner checkpoint")->required();
  gen->add_option("--data", o.data, "Dataset directory (default $SRFC_DATA_DIR)");
  gen->add_option("--split", o.subset, "train, val, test or all");
  gen->add_option("--max-len", o.max_len);
  gen->add_option("--out", o.out, "Caption file")->required();
  gen->add_option("--refs", o.refs_out, "Also write reference captions here");
  gen->add_option("--labels", o.labels_out, "Also write per-item labels (JSON lines) here");

  auto* score = app.add_subcommand("score", "Per-caption reward reports as JSON lines");
  score->add_option("--generated", o.generated)->required();
  score->add_option("--reference", o.reference)->required();
  score->add_option("--attributes", o.attr_file)->required();
  score->add_option("--classifier", o.classifier);
  score->add_option("--categories", o.cats_file, "One category name per line");
  score->add_option("--labels", o.labels, "JSON-lines labels from generate");

  auto* ev = app.add_subcommand("eval", "Corpus metrics as JSON");
  ev->add_option("--hyp", o.generated)->required();
  ev->add_option("--ref", o.reference)->required();
  ev->add_option("--attributes", o.attr_file)->required();
  ev->add_option("--classifier", o.classifier);
  ev->add_option("--categories", o.cats_file, "One category name per line");
  ev->add_option("--labels", o.labels, "JSON-lines labels from generate");
  ev->add_option("--plot", o.plot, "Write a metric plot (.svg) or table (.csv)");

  CLI11_PARSE(app, argc, argv);
  const std::string name = app.get_subcommands().front()->get_name();
  try {
    if (name == "synth") return cmd_synth(o);
    if (name == "ingest") return cmd_ingest(o);
    if (name == "pretrain-classifier") return cmd_pretrain(o);
    if (name == "train") return cmd_train(o);
    if (name == "generate") return cmd_generate(o);
    if (name == "score") return cmd_score(o);
    if (name == "eval") return cmd_eval(o);
  } catch (const std::exception& e) {
    std::cerr << "srfc: " << g_stage << ": " << e.what() << '\n';
    return 1;
  }
  return 2;
}
