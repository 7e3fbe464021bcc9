// Command-line entry point: synth, pretrain, train, transfer, eval.
//
// Exit codes: 0 success, 1 usage error, 2 runtime failure.

#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <sstream>

#include "pstyle/pipeline.hpp"
#include "pstyle/log.hpp"

using namespace pstyle;
namespace fs = std::filesystem;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  bool quiet = false;
};

struct Ablation {
  bool disable_shared = false, disable_style = false, style_embedding = false, disable_content = false,
       full_finetune = false;
};

RunConfig load_config(const Common& c, const Ablation* a = nullptr) {
  RunConfig cfg;
  if (!c.config_path.empty()) cfg.apply(KeyValueFile::load(c.config_path));
  for (const auto& o : c.overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + o + "'");
    try {
      cfg.set(trim(o.substr(0, eq)), trim(o.substr(eq + 1)));
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  }
  if (c.seed) cfg.seed = *c.seed;
  if (a) {
    cfg.ablation.disable_shared_prefix |= a->disable_shared;
    cfg.ablation.disable_style_prefix |= a->disable_style || a->style_embedding;
    cfg.ablation.use_style_embedding_instead |= a->style_embedding;
    cfg.ablation.disable_content_prefix |= a->disable_content;
    cfg.ablation.full_finetune |= a->full_finetune;
  }
  return cfg;
}

fs::path require_out_dir(const Common& c) {
  if (c.out_dir.empty()) throw UsageError("--out-dir is required");
  fs::create_directories(c.out_dir);
  return c.out_dir;
}

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config_path, "key = value configuration file")->check(CLI::ExistingFile);
  sub->add_option("--set", c.overrides, "override one configuration key (key=value); repeatable");
  sub->add_option("--seed", c.seed, "random seed");
  sub->add_option("--out-dir", c.out_dir, "output directory");
  sub->add_flag("--quiet", c.quiet, "suppress progress output");
}

void add_ablation(CLI::App* sub, Ablation& a) {
  sub->add_flag("--disable-shared-prefix", a.disable_shared);
  sub->add_flag("--disable-style-prefix", a.disable_style);
  sub->add_flag("--use-style-embedding", a.style_embedding, "prepend the style embedding instead of a style prefix");
  sub->add_flag("--disable-content-prefix", a.disable_content);
  sub->add_flag("--full-finetune", a.full_finetune, "train a generator-side copy of the backbone as well");
}

int cmd_synth(const Common& c, const std::string& spec_path) {
  auto spec = spec_path.empty() ? SynthSpec::defaults() : SynthSpec::load(spec_path);
  if (c.seed) spec.seed = *c.seed;
  const auto out = require_out_dir(c);
  for (const auto& p : synth_corpus(spec, out)) log_info("wrote ", p.string());
  return 0;
}

int cmd_pretrain(const Common& c, const std::string& corpus, bool force) {
  auto cfg = load_config(c);
  const auto out = require_out_dir(c);
  const auto ckpt_path = out / "backbone.ckpt";
  if (fs::exists(ckpt_path) && !force) {
    throw std::runtime_error(ckpt_path.string() + " exists; pass --force to overwrite");
  }
  const auto data = load_dataset(corpus, cfg.max_sentence_len, cfg.min_freq);
  cfg.model.vocab_size = data.vocab.size();
  cfg.validate();
  log_info("pretraining backbone: ", backbone_param_count(cfg.model), " parameters, vocabulary ", cfg.model.vocab_size);
  ParamStore<float> store;
  std::ostringstream log;
  const auto result = pretrain_backbone(cfg, data, store, &log);
  write_file_atomic(out / "pretrain_log.jsonl", log.str());
  backbone_checkpoint(cfg, data.vocab, store).save(ckpt_path);
  log_info("probe loss ", result.initial_loss, " -> ", result.final_loss, "; wrote ", ckpt_path.string());
  return 0;
}

int cmd_train(const Common& c, const Ablation& a, const std::string& corpus, const std::string& backbone_path,
              bool resume) {
  auto cfg = load_config(c, &a);
  const auto out = require_out_dir(c);
  const auto backbone = Checkpoint::load(backbone_path);
  const auto vocab = vocab_from_checkpoint(backbone);
  const auto data = load_dataset(corpus, cfg.max_sentence_len, cfg.min_freq, vocab);
  auto model = model_on_backbone(cfg, backbone);
  cfg = model->config();

  const auto tally = tally_params(cfg.model, cfg.prefix, cfg.discriminator_tokens, cfg.ablation.full_finetune);
  log_info("config ", cfg.hash(), "; ", tally.describe());
  std::string layout;
  if (!cfg.ablation.disable_shared_prefix) layout += std::to_string(cfg.prefix.shared_len) + " + ";
  if (!cfg.ablation.disable_style_prefix) layout += std::to_string(cfg.prefix.style_len) + " + ";
  layout += cfg.ablation.disable_content_prefix ? "0" : "n";
  log_info("prefix length per sentence: ", layout);

  const auto evaluator = Evaluator::train(data);
  Trainer trainer(*model, data, out);
  if (resume && fs::exists(out / "last.ckpt")) {
    trainer.resume(out / "last.ckpt");
    log_info("resumed at step ", trainer.step());
  }
  trainer.run(cfg.schedule.total_steps, dev_validator(evaluator, data.dev, data.vocab));
  log_info("finished ", trainer.step(), " steps in ", out.string());
  return 0;
}

int cmd_transfer(const Common& c, const std::string& checkpoint, const std::string& input, const std::string& sentence,
                 int target_style, std::optional<int> max_len, const std::string& output) {
  if (input.empty() == sentence.empty()) throw UsageError("give exactly one of --input or --sentence");
  const auto ck = Checkpoint::load(checkpoint);
  const auto vocab = vocab_from_checkpoint(ck);
  auto model = model_from_checkpoint(ck);
  (void)c;
  std::vector<std::string> lines;
  if (!sentence.empty()) {
    lines.push_back(sentence);
  } else {
    std::ifstream is(input);
    if (!is) throw std::runtime_error("cannot open " + input);
    std::string line;
    while (std::getline(is, line)) lines.push_back(line);
  }
  std::string result;
  for (const auto& line : lines) {
    const auto x = vocab.tokenize(line);
    std::vector<int> y;
    if (!x.empty()) {
      if (max_len) {
        NoGradScope<float> no_grad;
        const auto& gb = model->generator_backbone();
        auto cond = model->prefix().condition(gb.embed_ids(x), target_style);
        GenerateOptions o;
        o.max_len = *max_len;
        y = gb.generate(&cond.prefix, cond.context, o).ids;
      } else {
        y = model->transfer(x, target_style);
      }
    }
    result += vocab.detokenize(y) + '\n';
  }
  if (output.empty()) {
    std::cout << result;
  } else {
    write_file_atomic(output, result);
  }
  return 0;
}

int cmd_eval(const Common& c, const std::string& checkpoint, const std::string& corpus, const std::string& split_name,
             bool identity, const std::string& report_path) {
  const auto cfg = load_config(c);
  std::optional<Checkpoint> ck;
  std::optional<Vocab> vocab;
  if (!identity) {
    if (checkpoint.empty()) throw UsageError("--checkpoint is required unless --identity is given");
    ck = Checkpoint::load(checkpoint);
    vocab = vocab_from_checkpoint(*ck);
  }
  const auto data = load_dataset(corpus, cfg.max_sentence_len, cfg.min_freq, vocab);
  const Split* split = split_name == "test" ? &data.test : split_name == "dev" ? &data.dev : nullptr;
  if (split == nullptr) throw UsageError("--split must be test or dev");
  const auto evaluator = Evaluator::train(data);
  MetricsReport report;
  if (identity) {
    report = evaluator.evaluate(*split, data.vocab, [](const Sentence& x, int) { return x; });
    report.config_hash = cfg.hash();
    report.checkpoint_id = "identity";
  } else {
    auto model = model_from_checkpoint(*ck);
    report = evaluate_model(*model, evaluator, *split, data.vocab);
    report.checkpoint_id = file_id(checkpoint);
  }
  fs::path path = report_path;
  if (path.empty()) path = require_out_dir(c) / "report.txt";
  report.save(path);
  log_info("acc=", report.acc, " self_bleu=", report.self_bleu,
           report.ref_bleu ? " ref_bleu=" + std::to_string(*report.ref_bleu) : std::string(), " ppl=", report.ppl,
           "; wrote ", path.string());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prefix-tuned unsupervised text style transfer"};
  app.require_subcommand(1);
  Common common;
  Ablation ablation;

  auto* synth = app.add_subcommand("synth", "write a synthetic two-style corpus");
  std::string spec_path;
  synth->add_option("--spec", spec_path, "synthetic corpus spec (key = value)")->check(CLI::ExistingFile);
  add_common(synth, common);

  auto* pretrain = app.add_subcommand("pretrain", "train the backbone language model");
  std::string corpus;
  bool force = false;
  pretrain->add_option("--corpus", corpus, "corpus directory")->required();
  pretrain->add_flag("--force", force, "overwrite an existing checkpoint");
  add_common(pretrain, common);

  auto* train = app.add_subcommand("train", "adversarial prefix training on a frozen backbone");
  std::string backbone;
  bool resume = false;
  train->add_option("--corpus", corpus, "corpus directory")->required();
  train->add_option("--backbone", backbone, "pretrained backbone checkpoint")->required();
  train->add_flag("--resume", resume, "continue from <out-dir>/last.ckpt when present");
  add_common(train, common);
  add_ablation(train, ablation);

  auto* transfer = app.add_subcommand("transfer", "rewrite sentences in a target style");
  std::string checkpoint, input, sentence, output;
  int target_style = 1;
  std::optional<int> max_len;
  transfer->add_option("--checkpoint", checkpoint, "trained model checkpoint")->required();
  transfer->add_option("--input", input, "file with one sentence per line");
  transfer->add_option("--sentence", sentence, "a single sentence");
  transfer->add_option("--target-style", target_style, "0 or 1")->required()->check(CLI::Range(0, 1));
  transfer->add_option("--max-len", max_len, "maximum output length")->check(CLI::NonNegativeNumber);
  transfer->add_option("--output", output, "write outputs here instead of standard output");
  add_common(transfer, common);

  auto* eval = app.add_subcommand("eval", "ACC, self-BLEU, ref-BLEU and PPL of greedy transfer");
  std::string split = "test", report;
  bool identity = false;
  eval->add_option("--checkpoint", checkpoint, "trained model checkpoint");
  eval->add_option("--corpus", corpus, "corpus directory")->required();
  eval->add_option("--split", split, "test or dev");
  eval->add_flag("--identity", identity, "score the copy-the-input baseline instead of a checkpoint");
  eval->add_option("--report", report, "report path (default <out-dir>/report.txt)");
  add_common(eval, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }
  if (common.quiet) log_level() = LogLevel::kWarn;

  try {
    if (*synth) return cmd_synth(common, spec_path);
    if (*pretrain) return cmd_pretrain(common, corpus, force);
    if (*train) return cmd_train(common, ablation, corpus, backbone, resume);
    if (*transfer) return cmd_transfer(common, checkpoint, input, sentence, target_style, max_len, output);
    if (*eval) return cmd_eval(common, checkpoint, corpus, split, identity, report);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
