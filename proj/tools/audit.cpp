#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "attrgap/citex.hpp"
#include "attrgap/corpus.hpp"
#include "attrgap/gapmetrics.hpp"
#include "attrgap/headtohead.hpp"
#include "attrgap/report.hpp"
#include "attrgap/simkit.hpp"
#include "attrgap/statfit.hpp"
#include "attrgap/telemetry.hpp"

namespace fs = std::filesystem;
using namespace attrgap;
using gapmetrics::format_fixed;

namespace {

struct Globals {
  std::uint64_t seed = 42;
  unsigned threads = 1;
  std::string format = "csv";
};

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  void print(std::ostream& os, const std::string& format) const {
    if (format == "json") {
      auto arr = nlohmann::ordered_json::array();
      for (const auto& r : rows) {
        nlohmann::ordered_json o;
        for (std::size_t i = 0; i < header.size(); ++i) {
          char* end = nullptr;
          const double v = std::strtod(r[i].c_str(), &end);
          if (!r[i].empty() && end && *end == '\0') {
            o[header[i]] = v;
          } else {
            o[header[i]] = r[i];
          }
        }
        arr.push_back(o);
      }
      os << arr.dump(2) << '\n';
    } else if (format == "md") {
      auto line = [&](const std::vector<std::string>& r) {
        os << '|';
        for (const auto& f : r) os << ' ' << f << " |";
        os << '\n';
      };
      line(header);
      os << '|';
      for (std::size_t i = 0; i < header.size(); ++i) os << "---|";
      os << '\n';
      for (const auto& r : rows) line(r);
    } else {
      auto line = [&](const std::vector<std::string>& r) {
        for (std::size_t i = 0; i < r.size(); ++i) {
          if (i) os << ',';
          if (r[i].find_first_of(",\"") != std::string::npos) {
            os << '"';
            for (char c : r[i]) os << (c == '"' ? "\"\"" : std::string(1, c));
            os << '"';
          } else {
            os << r[i];
          }
        }
        os << '\n';
      };
      line(header);
      for (const auto& r : rows) line(r);
    }
  }

  void save(const fs::path& path, const std::string& format) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    print(f, format);
  }
};

struct InputArgs {
  std::string input;
  std::string topics;
  bool allow_unknown = false;
  bool final_turn_only = false;
  bool host_level = false;

  void add(CLI::App* app) {
    app->add_option("--input", input, "records JSONL")->required()->check(CLI::ExistingFile);
    app->add_option("--topics", topics, "topic sidecar (JSON object or JSONL)")->check(CLI::ExistingFile);
    app->add_flag("--allow-unknown-models", allow_unknown, "map unknown model ids by prefix");
    app->add_flag("--final-turn-only", final_turn_only, "keep only the last turn's search results");
    app->add_flag("--host-level", host_level, "count unique hosts instead of unique pages");
  }
  LoadOptions load() const { return {allow_unknown, final_turn_only}; }
  citex::Options cite() const {
    return {host_level ? urlnorm::Granularity::host : urlnorm::Granularity::page};
  }
  Dataset read(bool cleaned = true) const {
    Dataset ds = load_records(input, load());
    if (!topics.empty()) ds = attach_topics(std::move(ds), load_topic_sidecar(topics));
    return cleaned ? clean(std::move(ds)) : ds;
  }
};

std::string read_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + p.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        out.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        out.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.emplace_back();
    } else if (c != '\r') {
      out.back() += c;
    }
  }
  return out;
}

Family family_arg(const std::string& s) {
  auto f = parse_family(s);
  if (!f) throw std::runtime_error("unknown family: " + s);
  return *f;
}

Topic topic_arg(const std::string& s) {
  auto t = parse_topic(s);
  if (!t) throw std::runtime_error("unknown topic: " + s);
  return *t;
}

Table family_table(const gapmetrics::FamilySummary& s) {
  Table t{{"family", "n", "median_gap", "median_citations", "median_sites", "zero_citation", "zero_visit"}, {}};
  for (const auto& r : s.rows) {
    t.rows.push_back({std::string(to_string(r.family)), std::to_string(r.n), format_fixed(r.median_gap, 1),
                      format_fixed(r.median_citations, 1), format_fixed(r.median_sites, 1),
                      std::to_string(r.zero_citation), std::to_string(r.zero_visit)});
  }
  return t;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attribution-gap audit toolkit"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "random seed")->capture_default_str();
  app.add_option("--threads", g.threads, "worker threads")->capture_default_str()->check(CLI::Range(1u, 1024u));
  app.add_option("--format", g.format, "stdout format")
      ->check(CLI::IsMember({"csv", "json", "md"}))
      ->capture_default_str();

  // ingest
  auto* ingest = app.add_subcommand("ingest", "load, attach topics, clean, and write canonical JSONL");
  InputArgs ingest_in;
  std::string ingest_out;
  ingest_in.add(ingest);
  ingest->add_option("--out", ingest_out, "cleaned records JSONL")->required();

  // summarize
  auto* summarize = app.add_subcommand("summarize", "family summary (Table 1 shape) and topic zero-citation rates");
  InputArgs sum_in;
  std::string sum_out;
  sum_in.add(summarize);
  summarize->add_option("--out", sum_out, "output directory for table1.csv/table1.md");

  // cite
  auto* cite = app.add_subcommand("cite", "print the citations of one record");
  InputArgs cite_in;
  std::string cite_record;
  cite_in.add(cite);
  cite->add_option("--record", cite_record, "record_id")->required();

  // fit
  auto* fit = app.add_subcommand("fit", "fit the hurdle model");
  InputArgs fit_in;
  std::string fit_out, fit_inter = "off";
  bool fit_poisson = false;
  fit_in.add(fit);
  fit->add_option("--interactions", fit_inter, "family x topic and family x search terms")
      ->check(CLI::IsMember({"on", "off"}))
      ->capture_default_str();
  fit->add_flag("--poisson", fit_poisson, "Poisson count part instead of negative binomial");
  fit->add_option("--out", fit_out, "fit JSON")->required();

  // predict
  auto* predict = app.add_subcommand("predict", "expected gap at one covariate profile");
  std::string pred_fit, pred_family = "Gemini", pred_topic = std::string(to_string(kReferenceTopic));
  double pred_s = 5, pred_chars = 2089;
  std::size_t pred_boot = 0;
  predict->add_option("--fit", pred_fit, "fit JSON, or 'published' for the printed main-effects coefficients")
      ->required();
  predict->add_option("--family", pred_family)->capture_default_str();
  predict->add_option("--topic", pred_topic)->capture_default_str();
  predict->add_option("--s", pred_s, "unique search results")->capture_default_str();
  predict->add_option("--chars", pred_chars, "response characters")->capture_default_str();
  predict->add_option("--bootstrap", pred_boot, "parametric bootstrap replicates (0 = none)")->capture_default_str();

  // h2h
  auto* h2h = app.add_subcommand("h2h", "per-focal-model head-to-head OLS");
  InputArgs h2h_in;
  std::string h2h_out;
  bool h2h_log = false, h2h_robust = false;
  h2h_in.add(h2h);
  h2h->add_option("--out", h2h_out, "table5.csv");
  h2h->add_flag("--log-length", h2h_log, "length difference in log characters");
  h2h->add_flag("--robust", h2h_robust, "HC1 standard errors");

  // anova
  auto* anova = app.add_subcommand("anova", "one-way ANOVA of beta1 by family");
  std::string anova_in;
  anova->add_option("--in", anova_in, "table5.csv (columns variant,family,n,beta1,se,p)")
      ->required()
      ->check(CLI::ExistingFile);

  // simulate
  auto* simulate = app.add_subcommand("simulate", "generate synthetic records from the hurdle process");
  std::string sim_config, sim_out;
  std::size_t sim_n = 0;
  simulate->add_option("--config", sim_config, "simulation config JSON")->check(CLI::ExistingFile);
  simulate->add_option("--n", sim_n, "record count (overrides the config)");
  simulate->add_option("--out", sim_out, "records JSONL")->required();

  // trace-verify
  auto* trace = app.add_subcommand("trace-verify", "audit a telemetry trace bundle");
  std::string trace_bundle, trace_from, trace_record;
  trace->add_option("--bundle", trace_bundle, "trace bundle JSON");
  trace->add_option("--from-records", trace_from, "build the bundle from a legacy record instead")
      ->check(CLI::ExistingFile);
  trace->add_option("--record", trace_record, "record_id for --from-records");

  // report
  auto* report = app.add_subcommand("report", "run the full pipeline and write every table");
  InputArgs rep_in;
  std::string rep_out;
  std::size_t rep_boot = 1000;
  bool rep_log = false;
  rep_in.add(report);
  report->add_option("--out", rep_out, "output directory")->required();
  report->add_option("--bootstrap", rep_boot, "bootstrap replicates per cell")->capture_default_str();
  report->add_flag("--log-length", rep_log, "head-to-head length difference in log characters");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*ingest) {
      Dataset raw = ingest_in.read(false);
      const std::size_t n_raw = raw.records.size();
      Dataset ds = clean(std::move(raw));
      write_records(ingest_out, ds);
      std::cerr << "loaded " << n_raw << ", kept " << ds.records.size();
      for (const auto& [reason, k] : ds.n_dropped) std::cerr << ", " << reason << " " << k;
      std::cerr << '\n';
    } else if (*summarize) {
      const Dataset ds = sum_in.read();
      const auto audits = gapmetrics::audit_all(ds.records, sum_in.cite(), g.threads);
      const auto s = gapmetrics::family_summary(audits);
      const Table t = family_table(s);
      t.print(std::cout, g.format);
      if (!sum_out.empty()) {
        fs::create_directories(sum_out);
        t.save(fs::path(sum_out) / "table1.csv", "csv");
        t.save(fs::path(sum_out) / "table1.md", "md");
        Table z{{"topic", "zero_citation", "n", "percent"}, {}};
        for (const auto& r : gapmetrics::topic_zero_rates(audits)) {
          z.rows.push_back({std::string(to_string(r.topic)), std::to_string(r.zero_citation), std::to_string(r.n),
                            format_fixed(r.percent, 1)});
        }
        z.save(fs::path(sum_out) / "topic_zero_rates.csv", "csv");
      }
    } else if (*cite) {
      const Dataset ds = cite_in.read(false);
      const ConversationRecord* rec = nullptr;
      for (const auto& r : ds.records) {
        if (r.record_id == cite_record) rec = &r;
      }
      if (!rec) throw std::runtime_error("no record with id " + cite_record);
      Table t{{"start", "end", "kind", "status", "number", "resolved", "surface"}, {}};
      for (const auto& c : citex::extract(rec->response_text, rec->search_results, cite_in.cite())) {
        t.rows.push_back({std::to_string(c.start), std::to_string(c.end), std::string(citex::to_string(c.kind)),
                          std::string(citex::to_string(c.status)), c.number ? std::to_string(*c.number) : "",
                          c.resolved ? c.resolved->render() : "", c.surface});
      }
      t.print(std::cout, g.format);
      const auto a = gapmetrics::audit_record(*rec, cite_in.cite());
      std::cerr << "visited " << a.visited_unique << ", cited " << a.cited_unique_grounded << ", gap " << a.gap
                << ", grammar " << citex::kGrammarVersion << '\n';
    } else if (*fit) {
      const Dataset ds = fit_in.read();
      const auto obs = statfit::observations_from_audits(gapmetrics::audit_all(ds.records, fit_in.cite(), g.threads));
      const auto spec =
          fit_inter == "on" ? statfit::DesignSpec::with_interactions() : statfit::DesignSpec::main_effects();
      const auto f = statfit::fit_hurdle(obs, spec,
                                         fit_poisson ? statfit::CountFamily::poisson : statfit::CountFamily::negbin);
      std::ofstream(fit_out, std::ios::binary) << statfit::fit_to_json(f).dump(2) << '\n';
      Table t{{"part", "term", "estimate", "se", "z", "p"}, {}};
      for (const auto& [name, part] : {std::pair{"count", &f.count}, std::pair{"zero", &f.gate}}) {
        for (const auto& r : statfit::coefficient_table(*part)) {
          t.rows.push_back({name, r.name, format_fixed(r.estimate, 6), format_fixed(r.se, 6), format_fixed(r.z, 6),
                            format_fixed(r.p, 6)});
        }
      }
      t.print(std::cout, g.format);
      std::cerr << "loglik " << format_fixed(f.loglik(), 6) << ", theta "
                << (fit_poisson ? std::string("inf") : format_fixed(f.theta(), 6)) << '\n';
    } else if (*predict) {
      const statfit::HurdleFit f = pred_fit == "published"
                                       ? statfit::published_main_effects_fit()
                                       : statfit::fit_from_json(nlohmann::json::parse(read_file(pred_fit)));
      const statfit::PredictionRequest req{family_arg(pred_family), topic_arg(pred_topic), pred_s, pred_chars};
      const auto p = statfit::predict(f, req);
      Table t{{"family", "topic", "s", "chars", "p_gap", "lambda", "mean_given_gap", "expected_gap"}, {}};
      std::vector<std::string> row{std::string(to_string(req.family)), std::string(to_string(req.topic)),
                                   format_fixed(req.s, 0), format_fixed(req.chars, 0), format_fixed(p.p_gap, 4),
                                   format_fixed(p.lambda, 4), format_fixed(p.mean_given_gap, 4),
                                   format_fixed(p.expected_gap, 4)};
      if (pred_boot > 0) {
        const auto b = statfit::bootstrap_ci(f, req, pred_boot, g.seed, g.threads);
        for (const char* h : {"boot_mean", "lo95", "hi95", "se"}) t.header.push_back(h);
        for (double v : {b.mean, b.lo95, b.hi95, b.se}) row.push_back(format_fixed(v, 4));
      }
      t.rows.push_back(row);
      t.print(std::cout, g.format);
    } else if (*h2h) {
      const Dataset ds = h2h_in.read();
      const auto audits = gapmetrics::audit_all(ds.records, h2h_in.cite(), g.threads);
      const auto build = headtohead::build_pairs(pair_battles(ds), audits, {h2h_log});
      const auto results = headtohead::ols_by_focal(build.rows, {h2h_robust}, g.threads);
      Table t{{"variant", "family", "n", "beta1", "se", "p"}, {}};
      for (const auto& r : results) {
        const auto k = static_cast<Eigen::Index>(*r.fit.index_of(headtohead::kDeltaS));
        t.rows.push_back({r.variant, std::string(to_string(r.family)), std::to_string(r.fit.n),
                          format_fixed(r.fit.coef[k], 6), format_fixed(r.fit.se[k], 6), format_fixed(r.fit.p[k], 6)});
      }
      t.print(std::cout, g.format);
      if (!h2h_out.empty()) t.save(h2h_out, "csv");
    } else if (*anova) {
      std::istringstream in(read_file(anova_in));
      std::string line;
      std::getline(in, line);
      const auto header = split_csv_line(line);
      auto col = [&](const std::string& name) {
        for (std::size_t i = 0; i < header.size(); ++i) {
          if (header[i] == name) return i;
        }
        throw std::runtime_error(anova_in + ": missing column " + name);
      };
      const auto fam_col = col("family"), beta_col = col("beta1");
      std::map<Family, std::vector<double>> groups;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = split_csv_line(line);
        if (f.size() <= std::max(fam_col, beta_col)) throw std::runtime_error("short row: " + line);
        groups[family_arg(f[fam_col])].push_back(std::stod(f[beta_col]));
      }
      const auto a = headtohead::anova_beta1(groups);
      Table t{{"ss_between", "ss_within", "df_between", "df_within", "ms_between", "ms_within", "F", "p"}, {}};
      t.rows.push_back({format_fixed(a.ss_between, 6), format_fixed(a.ss_within, 6), format_fixed(a.df_between, 0),
                        format_fixed(a.df_within, 0), format_fixed(a.ms_between, 6), format_fixed(a.ms_within, 6),
                        format_fixed(a.f, 6), format_fixed(a.p, 6)});
      t.print(std::cout, g.format);
    } else if (*simulate) {
      nlohmann::json cfg_json = nlohmann::json::object();
      if (!sim_config.empty()) cfg_json = nlohmann::json::parse(read_file(sim_config));
      if (!cfg_json.contains("seed")) cfg_json["seed"] = g.seed;
      if (sim_n > 0) cfg_json["n"] = sim_n;
      const auto sim = simkit::gen_hurdle(simkit::config_from_json(cfg_json));
      write_records(sim_out, sim.dataset);
      std::cerr << "wrote " << sim.dataset.records.size() << " records\n";
    } else if (*trace) {
      telemetry::TraceBundle b;
      if (!trace_bundle.empty()) {
        b = telemetry::decode(read_file(trace_bundle));
      } else if (!trace_from.empty() && !trace_record.empty()) {
        const Dataset ds = load_records(trace_from);
        const ConversationRecord* rec = nullptr;
        for (const auto& r : ds.records) {
          if (r.record_id == trace_record) rec = &r;
        }
        if (!rec) throw std::runtime_error("no record with id " + trace_record);
        b = telemetry::from_audit(*rec, gapmetrics::audit_record(*rec));
        std::cerr << telemetry::encode(b) << '\n';
      } else {
        throw std::runtime_error("trace-verify needs --bundle, or --from-records with --record");
      }
      const auto r = telemetry::verify(b);
      auto opt = [](const std::optional<double>& v) { return v ? format_fixed(*v, 6) : std::string(); };
      Table t{{"bundle_id", "seen", "cited", "uncited", "unknown_cited", "cited_score_mean", "uncited_score_mean",
               "cited_score_min", "cited_score_max", "uncited_score_min", "uncited_score_max"},
              {}};
      t.rows.push_back({b.bundle_id, std::to_string(r.pages_seen.size()), std::to_string(r.pages_cited.size()),
                        std::to_string(r.uncited.size()), std::to_string(r.unknown_cited.size()),
                        opt(r.cited_scores.mean), opt(r.uncited_scores.mean), opt(r.cited_scores.min),
                        opt(r.cited_scores.max), opt(r.uncited_scores.min), opt(r.uncited_scores.max)});
      t.print(std::cout, g.format);
    } else if (*report) {
      report::ReportOptions o;
      o.input = rep_in.input;
      if (!rep_in.topics.empty()) o.topics = rep_in.topics;
      o.out_dir = rep_out;
      o.seed = g.seed;
      o.threads = g.threads;
      o.bootstrap_reps = rep_boot;
      o.load = rep_in.load();
      o.cite = rep_in.cite();
      o.log_length = rep_log;
      const auto res = report::run_full(o);
      for (const auto& [name, rows] : res.rows) std::cerr << name << ": " << rows << " rows\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
