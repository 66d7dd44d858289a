#include "attrgap/report.hpp"

#include <fstream>
#include <sstream>
#include <vector>

#include <json.hpp>

#include "attrgap/digest.hpp"
#include "attrgap/gapmetrics.hpp"
#include "attrgap/headtohead.hpp"
#include "attrgap/log.hpp"
#include "attrgap/statfit.hpp"

namespace attrgap::report {

namespace {

namespace fs = std::filesystem;
using gapmetrics::format_fixed;

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

class Csv {
 public:
  explicit Csv(std::vector<std::string> header) { row(header); }
  void row(const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) out_ << ',';
      out_ << csv_field(fields[i]);
    }
    out_ << '\n';
    ++rows_;
  }
  std::size_t data_rows() const { return rows_ - 1; }
  std::string str() const { return out_.str(); }

 private:
  std::ostringstream out_;
  std::size_t rows_ = 0;
};

class Run {
 public:
  explicit Run(const ReportOptions& opts) : opts_(opts) {}

  void write(const std::string& name, const std::string& content, std::size_t rows) {
    std::ofstream f(opts_.out_dir / name, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + (opts_.out_dir / name).string());
    f << content;
    result.rows[name] = rows;
  }
  void write(const std::string& name, const Csv& csv) { write(name, csv.str(), csv.data_rows()); }

  void manifest(const std::string& status, const std::string& error) {
    nlohmann::ordered_json m;
    m["version"] = kVersion;
    m["citation_grammar"] = citex::kGrammarVersion;
    m["seed"] = opts_.seed;
    m["bootstrap_reps"] = opts_.bootstrap_reps;
    m["granularity"] = opts_.cite.granularity == urlnorm::Granularity::page ? "page" : "host";
    m["final_turn_only"] = opts_.load.final_turn_only;
    m["log_length"] = opts_.log_length;
    m["inputs"] = nlohmann::ordered_json::array();
    for (const auto& p : inputs) m["inputs"].push_back({{"path", p.path}, {"sha256", p.sha256}});
    m["completed_stage"] = result.completed_stage.empty() ? nlohmann::ordered_json(nullptr)
                                                          : nlohmann::ordered_json(result.completed_stage);
    m["status"] = status;
    if (!error.empty()) m["error"] = error;
    m["rows"] = result.rows;
    std::ofstream f(opts_.out_dir / "MANIFEST.json", std::ios::binary);
    f << m.dump(2) << '\n';
  }

  const ReportOptions& opts_;
  ReportResult result;
  std::vector<SourceDigest> inputs;
};

double no_visit_share(std::span<const gapmetrics::AnswerAudit> audits) {
  if (audits.empty()) return 0;
  std::size_t k = 0;
  for (const auto& a : audits) k += a.no_search;
  return static_cast<double>(k) / static_cast<double>(audits.size());
}

std::string md_table1(const gapmetrics::FamilySummary& fs) {
  std::ostringstream o;
  o << "| Family | Median Gap | Median Citations | Median Sites | Zero Citations | Zero Visits | N |\n";
  o << "|---|---|---|---|---|---|---|\n";
  for (const auto& r : fs.rows) {
    o << "| " << to_string(r.family) << " | " << format_fixed(r.median_gap, 1) << " | "
      << format_fixed(r.median_citations, 1) << " | " << format_fixed(r.median_sites, 1) << " | "
      << r.zero_citation << " | " << r.zero_visit << " | " << r.n << " |\n";
  }
  return o.str();
}

void coefficient_rows(Csv& csv, const std::string& model, const std::string& part_name,
                      const statfit::Part& part) {
  for (const auto& r : statfit::coefficient_table(part)) {
    csv.row({model, part_name, r.name, format_fixed(r.estimate, 6), format_fixed(r.se, 6), format_fixed(r.z, 6),
             format_fixed(r.p, 6)});
  }
}

struct Table5Row {
  std::string variant;
  Family family;
  std::size_t n;
  double beta1, se, p;
};

}  // namespace

ReportResult run_full(const ReportOptions& opts) {
  Run run(opts);
  fs::create_directories(opts.out_dir);
  std::string stage = kStages[0];
  auto done = [&](const char* s) { run.result.completed_stage = s; };

  try {
    // ingest
    Dataset ds = load_records(opts.input, opts.load);
    run.inputs = ds.provenance;
    if (opts.topics) {
      run.inputs.push_back({opts.topics->string(), sha256_file_hex(*opts.topics)});
      ds = attach_topics(std::move(ds), load_topic_sidecar(*opts.topics));
    }
    const auto raw_audits = gapmetrics::audit_all(ds.records, opts.cite, opts.threads);
    done("ingest");

    stage = "clean";
    Dataset cleaned = clean(std::move(ds));
    done("clean");

    stage = "audit";
    const auto audits = gapmetrics::audit_all(cleaned.records, opts.cite, opts.threads);
    done("audit");

    stage = "summarize";
    const auto summary = gapmetrics::family_summary(audits);
    {
      Csv t1({"family", "n", "median_gap", "median_citations", "median_sites", "zero_citation", "zero_visit"});
      for (const auto& r : summary.rows) {
        t1.row({std::string(to_string(r.family)), std::to_string(r.n), format_fixed(r.median_gap, 1),
                format_fixed(r.median_citations, 1), format_fixed(r.median_sites, 1),
                std::to_string(r.zero_citation), std::to_string(r.zero_visit)});
      }
      run.write("table1.csv", t1);
      run.write("table1.md", md_table1(summary), summary.rows.size());

      Csv desc({"metric", "value"});
      desc.row({"records_loaded", std::to_string(raw_audits.size())});
      for (const auto& [reason, k] : cleaned.n_dropped) desc.row({"dropped_" + reason, std::to_string(k)});
      desc.row({"records_clean", std::to_string(audits.size())});
      desc.row({"no_visit_percent_before_cleaning", format_fixed(100 * no_visit_share(raw_audits), 1)});
      desc.row({"no_visit_percent_after_cleaning", format_fixed(100 * no_visit_share(audits), 1)});
      desc.row({"perfect_attribution_percent", format_fixed(100 * summary.perfect_attribution_share, 1)});
      desc.row({"positive_gap_percent", format_fixed(100 * summary.positive_gap_share, 1)});
      run.write("descriptives.csv", desc);

      Csv zr({"topic", "family", "zero_citation", "n", "percent"});
      std::vector<std::optional<Family>> filters = {std::nullopt};
      for (Family f : kFamilies) filters.emplace_back(f);
      for (const auto& f : filters) {
        for (const auto& r : gapmetrics::topic_zero_rates(audits, f)) {
          zr.row({std::string(to_string(r.topic)), f ? std::string(to_string(*f)) : "all",
                  std::to_string(r.zero_citation), std::to_string(r.n), format_fixed(r.percent, 1)});
        }
      }
      run.write("topic_zero_rates.csv", zr);

      std::vector<long> gaps;
      for (const auto& a : audits) gaps.push_back(static_cast<long>(a.gap));
      std::optional<gapmetrics::NbOverlay> overlay;
      try {
        overlay = statfit::fit_nb_marginal(gaps);
      } catch (const statfit::StatError& e) {
        warn(std::string("histogram overlay omitted: ") + e.what());
      }
      Csv hist({"gap", "frequency", "nb_expected"});
      for (const auto& b : gapmetrics::gap_histogram(audits, std::nullopt, overlay)) {
        hist.row({std::to_string(b.gap), std::to_string(b.frequency), b.overlay ? format_fixed(*b.overlay, 4) : ""});
      }
      run.write("histogram.csv", hist);
    }
    done("summarize");

    stage = "fit";
    const auto obs = statfit::observations_from_audits(audits);
    const auto fit_main = statfit::fit_hurdle(obs, statfit::DesignSpec::main_effects());
    const auto fit_int = statfit::fit_hurdle(obs, statfit::DesignSpec::with_interactions());
    {
      Csv t34({"model", "part", "term", "estimate", "se", "z", "p"});
      coefficient_rows(t34, "main_effects", "count", fit_main.count);
      coefficient_rows(t34, "main_effects", "zero", fit_main.gate);
      coefficient_rows(t34, "interactions", "count", fit_int.count);
      coefficient_rows(t34, "interactions", "zero", fit_int.gate);
      run.write("tables34.csv", t34);
      run.write("fit_main_effects.json", statfit::fit_to_json(fit_main).dump(2) + "\n", 1);
      run.write("fit_interactions.json", statfit::fit_to_json(fit_int).dump(2) + "\n", 1);

      std::ostringstream lr;
      try {
        const auto fit_pois = statfit::fit_hurdle(obs, statfit::DesignSpec::main_effects(),
                                                  statfit::CountFamily::poisson);
        const auto t = statfit::lr_test_poisson(fit_main, fit_pois);
        lr << "H0: count part is Poisson (alpha = 0), main-effects design\n"
           << "loglik_negbin " << format_fixed(fit_main.count.loglik, 6) << "\n"
           << "loglik_poisson " << format_fixed(fit_pois.count.loglik, 6) << "\n"
           << "statistic " << format_fixed(t.statistic, 6) << "\n"
           << "p " << format_fixed(t.p, 6) << "\n";
      } catch (const statfit::StatError& e) {
        lr << "not computed: " << e.what() << "\n";
      }
      run.write("lr_test.txt", lr.str(), 1);
    }
    done("fit");

    stage = "predict";
    struct Cell {
      statfit::PredictionRequest req;
      std::optional<statfit::Prediction> main, inter;
    };
    std::vector<Cell> grid;
    for (Family f : kFamilies) {
      for (Topic t : kTopics) {
        Cell c{{f, t, opts.median_s, opts.median_chars}, {}, {}};
        try {
          c.main = statfit::predict(fit_main, c.req);
          c.inter = statfit::predict(fit_int, c.req);
        } catch (const statfit::StatError& e) {
          warn(std::string("prediction cell skipped: ") + e.what());
        }
        grid.push_back(c);
      }
    }
    {
      Csv tg({"topic", "GPT", "Gemini", "Sonar"});
      for (Topic t : kTopics) {
        std::vector<std::string> row{std::string(to_string(t))};
        for (Family f : kFamilies) {
          const auto& c = grid[static_cast<std::size_t>(f) * kTopicCount + static_cast<std::size_t>(t)];
          row.push_back(c.inter ? format_fixed(c.inter->expected_gap, 4) : "NA");
        }
        tg.row(row);
      }
      run.write("topic_gaps.csv", tg);
    }
    done("predict");

    stage = "bootstrap";
    {
      Csv t2({"family", "topic", "p_gap", "mean_given_gap", "expected_gap", "boot_mean", "lo95", "hi95", "se",
              "p_gap_main_effects", "expected_gap_main_effects"});
      for (const auto& c : grid) {
        std::vector<std::string> row{std::string(to_string(c.req.family)), std::string(to_string(c.req.topic))};
        if (!c.inter) {
          for (int i = 0; i < 9; ++i) row.push_back("NA");
        } else {
          const auto b = statfit::bootstrap_ci(fit_int, c.req, opts.bootstrap_reps, opts.seed, opts.threads);
          for (double v : {c.inter->p_gap, c.inter->mean_given_gap, c.inter->expected_gap, b.mean, b.lo95, b.hi95,
                           b.se, c.main->p_gap, c.main->expected_gap}) {
            row.push_back(format_fixed(v, 4));
          }
        }
        t2.row(row);
      }
      run.write("table2.csv", t2);
    }
    done("bootstrap");

    stage = "h2h";
    std::vector<Table5Row> t5rows;
    {
      const auto pairing = pair_battles(cleaned);
      const auto build = headtohead::build_pairs(pairing, audits, {opts.log_length});
      std::map<std::string, std::vector<headtohead::PairRow>> by_focal;
      for (const auto& r : build.rows) by_focal[r.focal].push_back(r);
      Csv t5({"variant", "family", "n", "beta1", "se", "p"});
      for (const auto& [id, rows] : by_focal) {
        try {
          const auto fit = headtohead::ols(rows);
          const auto k = *fit.index_of(headtohead::kDeltaS);
          Table5Row r{id, rows.front().focal_family, fit.n, fit.coef[static_cast<Eigen::Index>(k)],
                      fit.se[static_cast<Eigen::Index>(k)], fit.p[static_cast<Eigen::Index>(k)]};
          t5.row({r.variant, std::string(to_string(r.family)), std::to_string(r.n), format_fixed(r.beta1, 6),
                  format_fixed(r.se, 6), format_fixed(r.p, 6)});
          t5rows.push_back(r);
        } catch (const headtohead::RegressionError& e) {
          warn("focal model " + id + " skipped: " + e.what());
        }
      }
      run.write("table5.csv", t5);
    }
    done("h2h");

    stage = "anova";
    {
      std::map<Family, std::vector<double>> groups;
      for (const auto& r : t5rows) groups[r.family].push_back(r.beta1);
      std::ostringstream a;
      try {
        const auto res = headtohead::anova_beta1(groups);
        a << "one-way ANOVA of beta1 by family\n"
          << "ss_between " << format_fixed(res.ss_between, 6) << "\n"
          << "ss_within " << format_fixed(res.ss_within, 6) << "\n"
          << "df " << format_fixed(res.df_between, 0) << " " << format_fixed(res.df_within, 0) << "\n"
          << "ms_between " << format_fixed(res.ms_between, 6) << "\n"
          << "ms_within " << format_fixed(res.ms_within, 6) << "\n"
          << "F " << format_fixed(res.f, 6) << "\n"
          << "p " << format_fixed(res.p, 6) << "\n";
      } catch (const std::invalid_argument& e) {
        a << "not computed: " << e.what() << "\n";
      }
      run.write("anova.txt", a.str(), 1);
    }
    done("anova");

    stage = "emit";
    done("emit");
    run.manifest("ok", "");
  } catch (const std::exception& e) {
    run.manifest("failed", stage + ": " + e.what());
    throw ReportError(stage, e.what());
  }
  return run.result;
}

}  // namespace attrgap::report
