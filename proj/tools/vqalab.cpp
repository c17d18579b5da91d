// vqalab command-line tool: generate, pretrain, finetune, suite, report, stats.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "vqalab/metrics.hpp"
#include "vqalab/runner.hpp"
#include "vqalab/suite.hpp"
#include "vqalab/synthcp.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace vqalab;

namespace {

json load_json(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::io, "cannot open config '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::io, "malformed config '" + path + "': " + e.what());
  }
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec && fs::is_directory(dir), ErrorKind::io, "cannot create output directory '" + dir.string() + "'");
}

void echo_config(const fs::path& dir, const json& config) { write_text(dir / "config.json", config.dump(2) + "\n"); }

void write_log(const fs::path& path, const std::vector<EpochLog>& log) { write_text(path, json(log).dump(2) + "\n"); }

/// Sets `dst` from `src` only when the flag was given on the command line.
template <class T>
void take(const CLI::Option* opt, const T& src, T& dst) {
  if (opt->count() > 0) dst = src;
}

void print_error(const std::string& kind, const std::string& message) {
  std::cerr << json{{"error", {{"kind", kind}, {"message", message}}}}.dump() << std::endl;
}

void progress(const std::string& m) { std::cerr << "[vqalab] " << m << std::endl; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Visual-grounding loss laboratory on a synthetic changing-prior VQA dataset"};
  app.require_subcommand(1);

  // generate ---------------------------------------------------------------
  auto* gen = app.add_subcommand("generate", "Generate a synthetic dataset bundle (dataset.jsonl)");
  std::string gen_out, gen_config;
  std::uint64_t gen_seed = 7;
  GeneratorConfig gflags;
  gen->add_option("--out-dir", gen_out, "Output directory")->required();
  gen->add_option("--config", gen_config, "Generator config JSON");
  auto* o_gseed = gen->add_option("--seed", gen_seed, "Dataset seed");
  auto* o_ntrain = gen->add_option("--n-train", gflags.n_train);
  auto* o_ntest = gen->add_option("--n-test", gflags.n_test);
  auto* o_nctl = gen->add_option("--n-control", gflags.n_control);
  auto* o_k = gen->add_option("--regions", gflags.regions, "Regions per image (K)");
  auto* o_d = gen->add_option("--dim", gflags.dim, "Region feature dimension (d)");
  auto* o_qt = gen->add_option("--question-types", gflags.n_question_types);
  auto* o_apt = gen->add_option("--answers-per-type", gflags.answers_per_type);
  auto* o_shift = gen->add_option("--shift", gflags.shift, "Prior shift strength in [0, 1]");
  auto* o_noise = gen->add_option("--noise", gflags.noise, "Region noise standard deviation");
  auto* o_cue = gen->add_option("--cue-fraction", gflags.cue_fraction);
  auto* o_tail = gen->add_option("--prior-tail", gflags.prior_tail);

  // pretrain ---------------------------------------------------------------
  auto* pre = app.add_subcommand("pretrain", "Train a baseline model on bce");
  std::string pre_dataset, pre_out, pre_config, pre_profile = "desk", pre_domain = "shifted", pre_opt;
  PretrainConfig pflags;
  pre->add_option("--dataset", pre_dataset)->required();
  pre->add_option("--out-dir", pre_out)->required();
  pre->add_option("--config", pre_config, "Pretrain config JSON");
  pre->add_option("--profile", pre_profile, "desk or paper")->check(CLI::IsMember({"desk", "paper"}));
  auto* o_pdom = pre->add_option("--domain", pre_domain)->check(CLI::IsMember({"shifted", "control"}));
  auto* o_pseed = pre->add_option("--seed", pflags.seed);
  auto* o_plr = pre->add_option("--lr", pflags.learning_rate);
  auto* o_pep = pre->add_option("--epochs", pflags.epochs);
  auto* o_pbs = pre->add_option("--batch-size", pflags.batch_size);
  auto* o_phid = pre->add_option("--hidden", pflags.hidden);
  auto* o_popt = pre->add_option("--optimizer", pre_opt)->check(CLI::IsMember({"sgd", "momentum"}));

  // finetune ---------------------------------------------------------------
  auto* ft = app.add_subcommand("finetune", "Fine-tune a checkpoint with hint, scr or zero_out");
  std::string ft_dataset, ft_ckpt, ft_out, ft_config, ft_profile = "desk", ft_method = "hint", ft_variant,
                                                   ft_mode, ft_domain = "shifted";
  RunConfig fflags;
  std::size_t ft_report_epoch = 0;
  bool ft_every = false, ft_full = false, ft_norm = false;
  ft->add_option("--dataset", ft_dataset)->required();
  ft->add_option("--checkpoint", ft_ckpt)->required();
  ft->add_option("--out-dir", ft_out)->required();
  ft->add_option("--config", ft_config, "Run config JSON");
  ft->add_option("--profile", ft_profile, "desk or paper")->check(CLI::IsMember({"desk", "paper"}));
  auto* o_fm = ft->add_option("--method", ft_method)->check(CLI::IsMember({"hint", "scr", "zero_out"}));
  auto* o_fv = ft->add_option("--variant", ft_variant)
                   ->check(CLI::IsMember({"relevant", "irrelevant", "fixed_random", "variable_random"}));
  auto* o_fdom = ft->add_option("--domain", ft_domain)->check(CLI::IsMember({"shifted", "control"}));
  auto* o_flr = ft->add_option("--lr", fflags.learning_rate, "Step size (zero_out default: base / r)");
  auto* o_fep = ft->add_option("--epochs", fflags.epochs);
  auto* o_fbs = ft->add_option("--batch-size", fflags.batch_size);
  auto* o_fr = ft->add_option("--r", fflags.subset_fraction, "zero_out subset fraction");
  auto* o_fmode = ft->add_option("--subset-mode", ft_mode)->check(CLI::IsMember({"fixed", "variable"}));
  auto* o_fseed = ft->add_option("--seed", fflags.seed);
  auto* o_fw = ft->add_option("--loss-weight", fflags.loss.loss_weight);
  auto* o_flam = ft->add_option("--lambda", fflags.loss.lambda);
  auto* o_fp2lr = ft->add_option("--phase2-lr", fflags.phase2_learning_rate);
  auto* o_fp2ep = ft->add_option("--phase2-epochs", fflags.phase2_epochs);
  auto* o_frep = ft->add_option("--report-epoch", ft_report_epoch, "Fixed reporting epoch");
  auto* o_fevery = ft->add_flag("--dump-every-epoch", ft_every, "Write predictions for every epoch");
  auto* o_ffull = ft->add_flag("--full-train-bce", ft_full, "Add a full-train bce stream");
  auto* o_fnorm = ft->add_flag("--normalize-sensitivities", ft_norm);

  // suite ------------------------------------------------------------------
  auto* su = app.add_subcommand("suite", "Run the full experiment grid and write report.{json,md,csv}");
  std::string su_dataset, su_out, su_config, su_profile = "desk";
  std::size_t su_seeds = 5, su_subsets = 200;
  su->add_option("--dataset", su_dataset)->required();
  su->add_option("--out-dir", su_out)->required();
  su->add_option("--config", su_config, "Suite config JSON");
  auto* o_sprof = su->add_option("--profile", su_profile)->check(CLI::IsMember({"desk", "paper"}));
  auto* o_sseeds = su->add_option("--seeds", su_seeds);
  auto* o_ssub = su->add_option("--subsets", su_subsets, "Subset count B of the comparison protocol");

  // report -----------------------------------------------------------------
  auto* rp = app.add_subcommand("report", "Re-emit a report.json as csv, md or json");
  std::string rp_in, rp_out, rp_format = "all";
  rp->add_option("--report", rp_in)->required();
  rp->add_option("--out-dir", rp_out)->required();
  rp->add_option("--format", rp_format)->check(CLI::IsMember({"csv", "md", "json", "all"}));

  // stats ------------------------------------------------------------------
  auto* st = app.add_subcommand("stats", "Compare two prediction dumps (accuracy, overlap, t-tests)");
  std::string st_a, st_b, st_dataset, st_split = "test";
  std::size_t st_subsets = 200;
  std::uint64_t st_seed = 0;
  st->add_option("--a", st_a, "predictions.csv of variant A")->required();
  st->add_option("--b", st_b, "predictions.csv of variant B")->required();
  st->add_option("--split", st_split)->check(CLI::IsMember({"train", "test", "control_train", "control_val"}));
  st->add_option("--subsets", st_subsets);
  st->add_option("--seed", st_seed, "Partition seed");
  st->add_option("--dataset", st_dataset, "dataset.jsonl, enables CPIG");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("usage", e.what());
    return 2;
  }

  try {
    if (*gen) {
      GeneratorConfig cfg;
      std::uint64_t seed = gen_seed;
      if (!gen_config.empty()) {
        const json j = load_json(gen_config);
        cfg = j.get<GeneratorConfig>();
        if (j.contains("seed") && o_gseed->count() == 0) seed = j.at("seed").get<std::uint64_t>();
      }
      take(o_ntrain, gflags.n_train, cfg.n_train);
      take(o_ntest, gflags.n_test, cfg.n_test);
      take(o_nctl, gflags.n_control, cfg.n_control);
      take(o_k, gflags.regions, cfg.regions);
      take(o_d, gflags.dim, cfg.dim);
      take(o_qt, gflags.n_question_types, cfg.n_question_types);
      take(o_apt, gflags.answers_per_type, cfg.answers_per_type);
      take(o_shift, gflags.shift, cfg.shift);
      take(o_noise, gflags.noise, cfg.noise);
      take(o_cue, gflags.cue_fraction, cfg.cue_fraction);
      take(o_tail, gflags.prior_tail, cfg.prior_tail);
      make_dir(gen_out);
      json echo = cfg;
      echo["seed"] = seed;
      echo_config(gen_out, echo);
      const DatasetBundle b = generate(cfg, seed);
      write_dataset(b, (fs::path(gen_out) / "dataset.jsonl").string());
      std::cout << json{{"dataset", (fs::path(gen_out) / "dataset.jsonl").string()},
                        {"train", b.train.size()},
                        {"test", b.test.size()},
                        {"control_train", b.control_train.size()},
                        {"control_val", b.control_val.size()}}
                       .dump()
                << std::endl;
    } else if (*pre) {
      const Schedule sched = Schedule::named(pre_profile);
      PretrainConfig cfg = PretrainConfig::from(sched, domain_from_string(pre_domain), 1);
      if (!pre_config.empty()) from_json(load_json(pre_config), cfg);
      if (o_pdom->count()) cfg.domain = domain_from_string(pre_domain);
      take(o_pseed, pflags.seed, cfg.seed);
      take(o_plr, pflags.learning_rate, cfg.learning_rate);
      take(o_pep, pflags.epochs, cfg.epochs);
      take(o_pbs, pflags.batch_size, cfg.batch_size);
      take(o_phid, pflags.hidden, cfg.hidden);
      if (o_popt->count()) cfg.optimizer = optimizer_kind_from_string(pre_opt);
      cfg.validate();
      make_dir(pre_out);
      json echo = cfg;
      echo["dataset"] = pre_dataset;
      echo_config(pre_out, echo);
      const DatasetBundle b = read_dataset(pre_dataset);
      const PretrainResult res = pretrain(b, cfg);
      write_checkpoint(res.checkpoint, (fs::path(pre_out) / "checkpoint.json").string());
      write_log(fs::path(pre_out) / "log.json", res.log);
      const EpochLog& last = res.log.back();
      std::cout << json{{"checkpoint", (fs::path(pre_out) / "checkpoint.json").string()},
                        {"train_accuracy", last.train_accuracy},
                        {"eval_accuracy", last.eval_accuracy}}
                       .dump()
                << std::endl;
    } else if (*ft) {
      const Schedule sched = Schedule::named(ft_profile);
      std::optional<json> file;
      if (!ft_config.empty()) file = load_json(ft_config);
      Method method = method_from_string(ft_method);
      if (o_fm->count() == 0 && file && file->contains("method"))
        method = method_from_string(file->at("method").get<std::string>());
      require(method != Method::baseline, ErrorKind::config, "finetune: method must not be baseline");
      RunConfig cfg = RunConfig::from(sched, method, domain_from_string(ft_domain), 1);
      if (file) from_json(*file, cfg);
      cfg.loss.method = method;
      if (o_fdom->count()) cfg.domain = domain_from_string(ft_domain);
      if (o_fv->count()) cfg.variant = cue_variant_from_string(ft_variant);
      if (o_fmode->count()) cfg.subset_mode = subset_mode_from_string(ft_mode);
      take(o_fr, fflags.subset_fraction, cfg.subset_fraction);
      if (method == Method::zero_out && !(file && file->contains("learning_rate")))
        cfg.learning_rate = sched.zero_out_base_lr / cfg.subset_fraction;
      take(o_flr, fflags.learning_rate, cfg.learning_rate);
      take(o_fep, fflags.epochs, cfg.epochs);
      take(o_fbs, fflags.batch_size, cfg.batch_size);
      take(o_fseed, fflags.seed, cfg.seed);
      take(o_fw, fflags.loss.loss_weight, cfg.loss.loss_weight);
      take(o_flam, fflags.loss.lambda, cfg.loss.lambda);
      take(o_fp2lr, fflags.phase2_learning_rate, cfg.phase2_learning_rate);
      take(o_fp2ep, fflags.phase2_epochs, cfg.phase2_epochs);
      if (o_frep->count()) cfg.report_epoch = ft_report_epoch;
      if (o_fevery->count()) cfg.records_every_epoch = ft_every;
      if (o_ffull->count()) cfg.full_train_bce = ft_full;
      if (o_fnorm->count()) cfg.loss.normalize_sensitivities = ft_norm;
      if (cfg.epochs > 0 && cfg.report_epoch && *cfg.report_epoch > cfg.epochs) cfg.report_epoch = cfg.epochs;
      make_dir(ft_out);
      json echo = cfg;
      echo["dataset"] = ft_dataset;
      echo["checkpoint"] = ft_ckpt;
      echo_config(ft_out, echo);
      const DatasetBundle b = read_dataset(ft_dataset);
      const Checkpoint start = read_checkpoint(ft_ckpt);
      const FinetuneResult res = finetune(b, start, cfg);
      const fs::path dir(ft_out);
      write_checkpoint(res.checkpoint, (dir / "checkpoint.json").string());
      write_predictions((dir / "predictions.csv").string(), res.records);
      write_log(dir / "log.json", res.log);
      for (const auto& er : res.epoch_records)
        write_predictions((dir / ("predictions_" + er.phase + "_" + std::to_string(er.epoch) + ".csv")).string(),
                          er.records);
      std::cout << json{{"checkpoint", (dir / "checkpoint.json").string()},
                        {"report_phase", res.report_phase},
                        {"report_epoch", res.report_epoch},
                        {"train_accuracy", res.train_accuracy},
                        {"eval_accuracy", res.eval_accuracy}}
                       .dump()
                << std::endl;
    } else if (*su) {
      SuiteConfig cfg;
      if (!su_config.empty()) cfg = load_json(su_config).get<SuiteConfig>();
      if (o_sprof->count()) {
        cfg.profile = su_profile;
        cfg.schedule = Schedule::named(su_profile);
      }
      take(o_sseeds, su_seeds, cfg.seeds);
      take(o_ssub, su_subsets, cfg.subset_count);
      cfg.validate();
      make_dir(su_out);
      json echo = cfg;
      echo["dataset"] = su_dataset;
      echo_config(su_out, echo);
      const DatasetBundle b = read_dataset(su_dataset);
      const ExperimentReport rep = run_suite(b, cfg, progress);
      for (ReportFormat f : {ReportFormat::json, ReportFormat::markdown, ReportFormat::csv}) emit_report(rep, f, su_out);
      std::size_t failed = 0;
      for (const auto& c : rep.cells) failed += c.shifted.failed || (c.control && c.control->failed);
      std::cout << json{{"report", (fs::path(su_out) / "report.json").string()}, {"failed_cells", failed}}.dump()
                << std::endl;
    } else if (*rp) {
      const ExperimentReport rep = read_report(rp_in);
      std::vector<ReportFormat> fmts;
      if (rp_format == "all")
        fmts = {ReportFormat::json, ReportFormat::markdown, ReportFormat::csv};
      else
        fmts = {report_format_from_string(rp_format)};
      json written = json::array();
      for (ReportFormat f : fmts)
        for (const auto& p : emit_report(rep, f, rp_out)) written.push_back(p.string());
      std::cout << json{{"written", written}}.dump() << std::endl;
    } else if (*st) {
      const Split split = split_from_string(st_split);
      auto load = [&](const std::string& path) {
        std::map<std::string, std::vector<PredictionRecord>> by_run;
        for (auto& r : read_predictions(path))
          if (r.split == split) by_run[r.run_id].push_back(std::move(r));
        require(!by_run.empty(), ErrorKind::empty_input, "no " + st_split + " records in '" + path + "'");
        return by_run;
      };
      const auto a = load(st_a), b = load(st_b);
      require(a.size() == b.size(), ErrorKind::alignment, "the two dumps contain different runs");
      std::vector<std::vector<PredictionRecord>> ra, rb;
      double ov = 0.0;
      for (auto ia = a.begin(), ib = b.begin(); ia != a.end(); ++ia, ++ib) {
        require(ia->first == ib->first, ErrorKind::alignment, "the two dumps contain different runs");
        ra.push_back(ia->second);
        rb.push_back(ib->second);
        ov += overlap(ia->second, ib->second);
      }
      const auto sa = subset_accuracy_samples(ra, st_subsets, st_seed);
      const auto sb = subset_accuracy_samples(rb, st_subsets, st_seed);
      const StatResult w = welch_t_test(sa, sb), p = paired_t_test(sa, sb);
      auto stat = [](const StatResult& s) { return json(s); };
      auto mean_acc = [](const std::vector<std::vector<PredictionRecord>>& runs) {
        double total = 0.0;
        for (const auto& r : runs) total += accuracy(r).overall;
        return total / static_cast<double>(runs.size());
      };
      json out{{"runs", ra.size()},
               {"accuracy_a", mean_acc(ra)},
               {"accuracy_b", mean_acc(rb)},
               {"overlap", ov / static_cast<double>(ra.size())},
               {"welch", stat(w)},
               {"paired", stat(p)}};
      if (!st_dataset.empty()) {
        const DatasetBundle bundle = read_dataset(st_dataset);
        auto cp = [&](const std::vector<std::vector<PredictionRecord>>& runs) {
          json vals = json::array();
          for (const auto& r : runs) {
            const auto v = cpig(r, bundle);
            vals.push_back(v ? json(*v) : json());
          }
          return vals;
        };
        out["cpig_a"] = cp(ra);
        out["cpig_b"] = cp(rb);
      }
      std::cout << out.dump(2) << std::endl;
    }
  } catch (const Error& e) {
    print_error(std::string(to_string(e.kind())), e.what());
    return 1;
  } catch (const std::exception& e) {
    print_error("internal", e.what());
    return 1;
  }
  return 0;
}
