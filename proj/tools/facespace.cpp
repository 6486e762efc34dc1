#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "artifacts.hpp"
#include "facespace/dataset.hpp"
#include "facespace/decoding.hpp"
#include "facespace/ensemble.hpp"
#include "facespace/error.hpp"
#include "facespace/parallel.hpp"
#include "facespace/subspace.hpp"
#include "facespace/synthgen.hpp"
#include "facespace/unitstats.hpp"
#include "facespace/verification.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace facespace;
using namespace facespace::cli;

namespace {

const std::vector<std::string> analysis_commands{"verify",       "ablate",      "anova", "correlate", "decode-gender",
                                                 "decode-view",  "pca",         "windows", "directions", "alignment"};

struct Options {
    std::string embeddings;
    std::string attributes;
    std::string out;
    std::string profile = "default";
    std::uint64_t seed = 0;
    int threads = 0;
    bool plots = false;

    std::vector<std::size_t> sizes; // empty: profile default
    std::size_t replicates = 10;
    std::size_t window = 30;
    std::int64_t held_out = 30;
    std::size_t permutations = 100;
    double fraction = 0.5;
    std::string similarity = "cosine";
    std::string zero_policy = "score-zero";
    double alpha = default_alpha;
    std::string correction = "bonferroni";
    std::string error_term = "pooled";
    bool equal_priors = false;
    double floor = default_assignment_floor;
    std::size_t bins = 20;
    bool write_basis = false;

    std::size_t dimension = 128;
    std::size_t identities = 300;
    std::size_t images_min = 10;
    std::size_t images_max = 10;
    std::size_t gender_directions = 1;
    std::size_t view_directions = 1;
    std::size_t identity_dims = 0;
    double sigma_identity = 1.0;
    double sigma_gender = 1.0;
    double sigma_view = 1.0;
    double sigma_noise = 0.6;
    double calibrate_r2 = 0.0;
    std::string format = "binary";
};

// Registers options on a subcommand and remembers which ones form the
// recorded config. --threads and --out never enter the config, so artifacts
// do not depend on them.
class Command {
public:
    Command(CLI::App& parent, const std::string& name, const std::string& help) : app_(parent.add_subcommand(name, help)) {}

    CLI::App* app() const noexcept { return app_; }

    template <typename T>
    CLI::Option* opt(const std::string& name, T& field, const std::string& help) {
        auto* o = app_->add_option("--" + name, field, help);
        recorded_.emplace_back(name, [&field] { return json(field); });
        return o;
    }

    CLI::Option* list(const std::string& name, std::vector<std::size_t>& field, const std::string& help) {
        auto* o = app_->add_option("--" + name, field, help)->delimiter(',');
        recorded_.emplace_back(name, [&field] { return json(field); });
        return o;
    }

    void flag(const std::string& name, bool& field, const std::string& help) {
        app_->add_flag("--" + name, field, help);
        recorded_.emplace_back(name, [&field] { return json(field); });
    }

    bool given(const std::string& name) const {
        const auto* o = app_->get_option_no_throw("--" + name);
        return o && o->count() > 0;
    }

    json config() const {
        json c = json::object();
        for (const auto& [k, get] : recorded_) c[k] = get();
        return c;
    }

private:
    CLI::App* app_;
    std::vector<std::pair<std::string, std::function<json()>>> recorded_;
};

void add_common(Command& c, Options& o, bool needs_data) {
    if (needs_data) {
        c.opt("embeddings", o.embeddings, "descriptor file (.emb binary or .csv)");
        c.opt("attributes", o.attributes, "attribute CSV (image_id, identity, gender, yaw)");
    }
    c.opt("seed", o.seed, "seed for every random draw");
    c.opt("profile", o.profile, "parameter profile: default or paper")->check(CLI::IsMember({"default", "paper"}));
    c.flag("plots", o.plots, "also write SVG plots");
    c.app()->add_option("--threads", o.threads, "worker thread cap (0 = runtime default)");
    c.app()->add_option("--out", o.out, "output root (default: $FACESPACE_OUT or ./facespace-out)");
}

void add_scoring(Command& c, Options& o) {
    c.opt("fraction", o.fraction, "probability an image goes to gallery A");
    c.opt("similarity", o.similarity, "pair similarity: cosine or dot")->check(CLI::IsMember({"cosine", "dot"}));
    c.opt("zero-policy", o.zero_policy, "zero-norm descriptors: score-zero or error")
        ->check(CLI::IsMember({"score-zero", "error"}));
}

void add_plan(Command& c, Options& o) {
    c.list("sizes", o.sizes, "comma-separated subspace sizes (default: D, then powers of two down to 2)");
    c.opt("replicates", o.replicates, "random subspaces per size");
}

// Profile defaults fill whatever was not given explicitly.
void apply_profile(const Command& c, Options& o) {
    const bool paper = o.profile == "paper";
    if (!c.given("replicates")) o.replicates = paper ? 50 : 10;
    if (!c.given("held-out")) o.held_out = paper ? 300 : 30;
    if (!c.given("permutations")) o.permutations = paper ? 1000 : 100;
    if (!c.given("dimension")) o.dimension = paper ? 512 : 128;
    if (!c.given("sizes") && paper) o.sizes = reference_subspace_sizes();
}

struct Inputs {
    EmbeddingSet emb;
    AttributeTable attrs;
    json manifest = json::array();
    std::vector<fs::path> paths;
};

std::string read_input(const std::string& flag, const std::string& path, Inputs& in) {
    if (path.empty()) throw ConfigError("--" + flag + " is required");
    if (!fs::is_regular_file(path)) throw ConfigError("--" + flag + ": no such file '" + path + "'");
    std::string bytes = detail::read_file(path);
    in.manifest.push_back({{"role", flag}, {"path", path}, {"sha256", sha256_hex(bytes)}, {"bytes", bytes.size()}});
    in.paths.push_back(fs::weakly_canonical(path));
    return bytes;
}

Inputs load_inputs(const Options& o) {
    Inputs in;
    const std::string eb = read_input("embeddings", o.embeddings, in);
    in.emb = format_from_path(o.embeddings) == EmbeddingFormat::csv ? decode_embeddings_csv(eb) : decode_embeddings_binary(eb);
    const std::string ab = read_input("attributes", o.attributes, in);
    in.attrs = decode_attributes_csv(ab).aligned_to(in.emb);
    return in;
}

ScoreOptions score_options(const Options& o) {
    ScoreOptions s;
    s.similarity = o.similarity == "dot" ? Similarity::dot : Similarity::cosine;
    s.zero_policy = o.zero_policy == "error" ? ZeroNormPolicy::error : ZeroNormPolicy::score_zero;
    return s;
}

LdaOptions lda_options(const Options& o) {
    LdaOptions l;
    l.use_priors = !o.equal_priors;
    return l;
}

std::vector<std::size_t> resolve_sizes(Options& o, std::size_t d) {
    if (o.sizes.empty()) o.sizes = halving_sizes(d);
    return o.sizes;
}

std::vector<std::string> ftest_cells(const std::optional<FTest>& t) {
    if (!t) return {"NA", "NA", "NA", "NA", "NA"};
    return {cell(t->f_ratio), cell(t->df_between), cell(t->df_within), cell(t->p_value), cell(t->r_squared)};
}

json size_summary_json(const std::vector<SizeSummary>& s) {
    json a = json::array();
    for (const auto& r : s) a.push_back({{"size", r.size}, {"mean", r.mean}, {"sd", r.sd}, {"min", r.min}, {"max", r.max}});
    return a;
}

Csv size_summary_csv(std::uint64_t seed, const std::vector<SizeSummary>& s) {
    Csv c(seed, {"size", "mean", "sd", "min", "max"});
    for (const auto& r : s) c.row({cell(r.size), cell(r.mean), cell(r.sd), cell(r.min), cell(r.max)});
    return c;
}

svg::Plot size_plot(const std::string& title, const std::string& y_label, const std::vector<std::size_t>& sizes,
                    const std::vector<double>& replicate_x, const std::vector<double>& replicate_y,
                    const std::vector<SizeSummary>& summary) {
    svg::Plot p;
    p.title = title;
    p.x_label = "subspace size (units)";
    p.y_label = y_label;
    p.log2_x = std::all_of(sizes.begin(), sizes.end(), [](std::size_t s) { return s > 0; });
    p.series.push_back({"replicates", svg::palette(5), replicate_x, replicate_y, svg::Mark::scatter});
    svg::Series mean_line{"mean", svg::palette(0), {}, {}, svg::Mark::line};
    for (const auto& s : summary) {
        mean_line.x.push_back(static_cast<double>(s.size));
        mean_line.y.push_back(s.mean);
    }
    p.series.push_back(mean_line);
    return p;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

void run_synth(Options& o, ArtifactWriter& w) {
    SynthSpec s;
    s.dimension = o.dimension;
    s.n_identities = o.identities;
    s.images_min = o.images_min;
    s.images_max = o.images_max;
    s.sigma_identity = o.sigma_identity;
    s.sigma_gender = o.sigma_gender;
    s.sigma_view = o.sigma_view;
    s.sigma_noise = o.sigma_noise;
    s.gender_direction_count = o.gender_directions;
    s.view_direction_count = o.view_directions;
    s.identity_dims = o.identity_dims;
    s.seed = o.seed;
    json calibration = nullptr;
    if (o.calibrate_r2 != 0.0) {
        const auto c = calibrate(o.calibrate_r2, s);
        s = c.spec;
        calibration = {{"target_r2", o.calibrate_r2}, {"achieved_r2", c.achieved}, {"evaluations", c.evaluations},
                       {"sigma_noise", s.sigma_noise}};
    }
    const auto data = generate(s);
    const bool csv = o.format == "csv";
    const std::string emb_name = csv ? "embeddings.csv" : "embeddings.emb";
    w.text(emb_name, csv ? encode_embeddings_csv(data.embeddings) : encode_embeddings_binary(data.embeddings));
    w.text("attributes.csv", encode_attributes_csv(data.attributes));
    json truth = to_json(data.truth);
    w.json("truth.json", truth);
    w.json("summary.json", {{"spec", to_json(s)},
                            {"images", data.embeddings.size()},
                            {"identities", data.attributes.identity_count()},
                            {"dimension", data.embeddings.dimension()},
                            {"mean_identity_r2", mean_identity_r2(data)},
                            {"calibration", calibration},
                            {"embeddings_file", emb_name}});
    std::cout << "synth: " << data.embeddings.size() << " images x " << data.embeddings.dimension() << " units\n";
}

void run_verify(Options& o, const Inputs& in, ArtifactWriter& w) {
    const auto split = make_split(in.attrs, o.fraction, o.seed);
    const auto scores = score_pairs(in.emb, in.attrs, split, score_options(o));
    const double a = auc(scores);

    Csv split_csv(o.seed, {"image_id", "gallery"});
    for (const auto& id : split.set_a) split_csv.row({id, "A"});
    for (const auto& id : split.set_b) split_csv.row({id, "B"});
    w.csv("split.csv", split_csv);

    // Score histograms and the ROC they imply; exact AUC is reported separately.
    double lo = -1.0, hi = 1.0;
    if (o.similarity == "dot") {
        lo = std::numeric_limits<double>::infinity(), hi = -lo;
        for (const auto* v : {&scores.genuine, &scores.impostor})
            for (double x : *v) lo = std::min(lo, x), hi = std::max(hi, x);
        if (!(hi > lo)) hi = lo + 1.0;
    }
    constexpr std::size_t bins = 400;
    Histogram hg(lo, hi, bins), hi_(lo, hi, bins);
    for (double x : scores.genuine) hg.add(x);
    for (double x : scores.impostor) hi_.add(x);
    Csv hist(o.seed, {"bin_lo", "bin_hi", "genuine", "impostor"});
    for (std::size_t b = 0; b < bins; ++b)
        hist.row({cell(lo + b * hg.bin_width()), cell(lo + (b + 1) * hg.bin_width()), cell(std::size_t(hg.counts[b])),
                  cell(std::size_t(hi_.counts[b]))});
    w.csv("score_histogram.csv", hist);

    Csv roc(o.seed, {"threshold", "tpr", "fpr"});
    svg::Series roc_line{"ROC", svg::palette(0), {0.0}, {0.0}, svg::Mark::line};
    double tp = 0, fp = 0;
    const double g_n = static_cast<double>(scores.genuine.size()), i_n = static_cast<double>(scores.impostor.size());
    roc.row({cell(hi), cell(0.0), cell(0.0)});
    for (std::size_t b = bins; b-- > 0;) {
        tp += static_cast<double>(hg.counts[b]);
        fp += static_cast<double>(hi_.counts[b]);
        roc.row({cell(lo + b * hg.bin_width()), cell(tp / g_n), cell(fp / i_n)});
        roc_line.x.push_back(fp / i_n);
        roc_line.y.push_back(tp / g_n);
    }
    w.csv("roc.csv", roc);

    w.json("summary.json", {{"auc", a},
                            {"genuine_pairs", scores.genuine.size()},
                            {"impostor_pairs", scores.impostor.size()},
                            {"comparisons", scores.total()},
                            {"gallery_a", split.set_a.size()},
                            {"gallery_b", split.set_b.size()},
                            {"zero_norm_pairs", scores.zero_norm_pairs},
                            {"genuine_mean", mean(scores.genuine)},
                            {"impostor_mean", mean(scores.impostor)},
                            {"similarity", o.similarity}});
    svg::Plot p{"Verification ROC (AUC " + svg::num(a) + ")", "false accept rate", "true accept rate", false, {roc_line}, 0.0, 1.0};
    w.plot("roc.svg", p);
    svg::Plot h{"Similarity scores", o.similarity, "pairs (fraction)", false, {}};
    svg::Series gs{"genuine", svg::palette(0), {}, {}, svg::Mark::line}, is{"impostor", svg::palette(3), {}, {}, svg::Mark::line};
    for (std::size_t b = 0; b < bins; ++b) {
        gs.x.push_back(hg.bin_center(b));
        gs.y.push_back(static_cast<double>(hg.counts[b]) / g_n);
        is.x.push_back(hg.bin_center(b));
        is.y.push_back(static_cast<double>(hi_.counts[b]) / i_n);
    }
    h.series = {gs, is};
    w.plot("scores.svg", h);
    std::cout << "verify: AUC " << a << " over " << scores.total() << " comparisons\n";
}

void run_ablate(Options& o, const Inputs& in, ArtifactWriter& w) {
    const auto plan = make_plan(in.emb.dimension(), resolve_sizes(o, in.emb.dimension()), o.replicates, o.seed);
    const auto split = make_split(in.attrs, o.fraction, o.seed);
    const auto res = ablation_curve(in.emb, in.attrs, split, plan, score_options(o));

    Csv rows(o.seed, {"size", "replicate", "auc", "zero_norm_pairs"});
    std::vector<double> px, py;
    std::size_t zero_pairs = 0;
    for (const auto& r : res.rows) {
        rows.row({cell(r.size), cell(r.replicate), cell(r.auc), cell(r.zero_norm_pairs)});
        px.push_back(static_cast<double>(r.size));
        py.push_back(r.auc);
        zero_pairs += r.zero_norm_pairs;
    }
    w.csv("ablation.csv", rows);
    w.csv("ablation_summary.csv", size_summary_csv(o.seed, res.summary));
    w.json("plan.json", to_json(plan));
    w.json("summary.json", {{"sizes", plan.sizes},
                            {"replicates", plan.replicates},
                            {"gallery_a", split.set_a.size()},
                            {"gallery_b", split.set_b.size()},
                            {"zero_norm_pairs", zero_pairs},
                            {"by_size", size_summary_json(res.summary)}});
    auto p = size_plot("Verification AUC vs. subspace size", "AUC", plan.sizes, px, py, res.summary);
    w.plot("ablation.svg", p);
    std::cout << "ablate: " << res.rows.size() << " subspaces\n";
}

void run_anova(Options& o, const Inputs& in, ArtifactWriter& w) {
    const ErrorTerm et = o.error_term == "welch" ? ErrorTerm::welch : ErrorTerm::pooled;
    const Correction corr = o.correction == "none" ? Correction::none : Correction::bonferroni;
    const std::array<Attribute, 3> attrs{Attribute::identity, Attribute::gender, Attribute::viewpoint};
    std::array<std::vector<std::optional<FTest>>, 3> tests;
    for (std::size_t a = 0; a < 3; ++a) tests[a] = unit_anova(in.emb, in.attrs, attrs[a], et);
    const std::size_t d = in.emb.dimension();
    const double threshold = significance_threshold(d, o.alpha, corr);

    std::vector<std::string> header{"unit"};
    for (auto a : attrs)
        for (const char* f : {"f", "df_between", "df_within", "p", "r2", "significant"})
            header.push_back(std::string(to_string(a)) + "_" + f);
    Csv table(o.seed, header);
    for (std::size_t u = 0; u < d; ++u) {
        std::vector<std::string> r{cell(u)};
        for (std::size_t a = 0; a < 3; ++a) {
            const auto c = ftest_cells(tests[a][u]);
            r.insert(r.end(), c.begin(), c.end());
            r.push_back(tests[a][u] ? (tests[a][u]->p_value < threshold ? "1" : "0") : "NA");
        }
        table.row(r);
    }
    w.csv("unit_anova.csv", table);

    json per = json::object();
    svg::Plot p{"Per-unit effect sizes", "r^2", "units", false, {}};
    constexpr std::size_t bins = 50;
    Csv hist(o.seed, {"attribute", "bin_lo", "bin_hi", "units"});
    for (std::size_t a = 0; a < 3; ++a) {
        std::vector<double> r2;
        for (const auto& t : tests[a])
            if (t) r2.push_back(t->r_squared);
        std::vector<double> sorted = r2;
        std::sort(sorted.begin(), sorted.end());
        per[to_string(attrs[a])] = {{"significant_fraction", significant_fraction(tests[a], o.alpha, corr)},
                                    {"mean_r2", mean_r_squared(tests[a])},
                                    {"median_r2", sorted.empty() ? 0.0 : quantile_sorted(sorted, 0.5)},
                                    {"tested_units", r2.size()},
                                    {"constant_units", d - r2.size()}};
        const auto h = make_histogram(r2, 0.0, 1.0, bins);
        svg::Series s{to_string(attrs[a]), svg::palette(a), {}, {}, svg::Mark::line};
        for (std::size_t b = 0; b < bins; ++b) {
            hist.row({to_string(attrs[a]), cell(b * h.bin_width()), cell((b + 1) * h.bin_width()),
                      cell(std::size_t(h.counts[b]))});
            s.x.push_back(h.bin_center(b));
            s.y.push_back(static_cast<double>(h.counts[b]));
        }
        p.series.push_back(s);
    }
    w.csv("r2_histogram.csv", hist);
    w.json("summary.json", {{"units", d},
                            {"alpha", o.alpha},
                            {"correction", o.correction},
                            {"error_term", o.error_term},
                            {"threshold", threshold},
                            {"attributes", per}});
    w.plot("r2_histogram.svg", p);
    std::cout << "anova: " << d << " units, threshold p < " << threshold << "\n";
}

void run_correlate(Options& o, const Inputs& in, ArtifactWriter& w) {
    const auto prof = correlation_profile(in.emb);
    Csv hist(o.seed, {"bin_lo", "bin_hi", "pairs"});
    svg::Series s{"", svg::palette(0), {}, {}, svg::Mark::bars};
    const auto& h = prof.histogram;
    for (std::size_t b = 0; b < h.counts.size(); ++b) {
        hist.row({cell(h.lo + b * h.bin_width()), cell(h.lo + (b + 1) * h.bin_width()), cell(std::size_t(h.counts[b]))});
        s.x.push_back(h.bin_center(b));
        s.y.push_back(static_cast<double>(h.counts[b]));
    }
    w.csv("correlation_histogram.csv", hist);
    // |r| < 0.17 share: exact from stored pairs, otherwise from the signed histogram
    double below = 0.0;
    if (prof.stored) {
        for (double r : prof.values) below += std::abs(r) < 0.17;
        below /= static_cast<double>(prof.values.size());
    } else {
        std::uint64_t c = 0;
        for (std::size_t b = 0; b < h.counts.size(); ++b)
            if (std::abs(h.bin_center(b)) < 0.17) c += h.counts[b];
        below = static_cast<double>(c) / static_cast<double>(h.total());
    }
    w.json("summary.json", {{"units", prof.dimension},
                            {"constant_units", prof.constant_units},
                            {"pairs", prof.pair_count},
                            {"exact_quantiles", prof.stored},
                            {"mean", prof.mean},
                            {"median", prof.median},
                            {"median_abs", prof.median_abs},
                            {"p95_abs", prof.p95_abs},
                            {"max_abs", prof.max_abs},
                            {"fraction_abs_below_0.17", below}});
    w.plot("correlation_histogram.svg", {"Unit-pair correlations", "r", "pairs", false, {s}});
    std::cout << "correlate: " << prof.pair_count << " pairs, 95% |r| < " << prof.p95_abs << "\n";
}

// Shared driver for the two decoding commands.
void run_decode(Options& o, const Inputs& in, ArtifactWriter& w, bool gender) {
    const Matrix& x = in.emb.descriptors();
    const auto folds = make_identity_folds(in.attrs, o.held_out, o.seed);
    const auto lda = lda_options(o);
    const std::string metric_name = gender ? "accuracy" : "mae";
    std::function<double(const Matrix&)> metric;
    if (gender)
        metric = [&](const Matrix& m) { return predict_gender_cv(m, in.attrs, folds, lda).accuracy; };
    else
        metric = [&](const Matrix& m) { return predict_viewpoint_cv(m, in.attrs, folds).mae; };

    Csv pred(o.seed, {"image_id", "identity", gender ? "gender" : "yaw", "predicted", "fold"});
    std::vector<std::size_t> fold_of(x.rows());
    for (std::size_t f = 0; f < folds.size(); ++f)
        for (auto r : folds[f].test) fold_of[r] = f;
    double full = 0.0;
    if (gender) {
        const auto res = predict_gender_cv(x, in.attrs, folds, lda);
        full = res.accuracy;
        for (std::size_t r = 0; r < x.rows(); ++r)
            pred.row({in.attrs[r].image_id, in.attrs[r].identity, to_string(in.attrs[r].gender),
                      to_string(static_cast<Gender>(res.predictions[r])), cell(fold_of[r])});
    } else {
        const auto res = predict_viewpoint_cv(x, in.attrs, folds);
        full = res.mae;
        for (std::size_t r = 0; r < x.rows(); ++r)
            pred.row({in.attrs[r].image_id, in.attrs[r].identity, cell(in.attrs[r].yaw), cell(res.predictions[r]),
                      cell(fold_of[r])});
    }
    w.csv("predictions.csv", pred);

    const auto plan = make_plan(x.cols(), resolve_sizes(o, x.cols()), o.replicates, o.seed);
    const auto rows = evaluate_plan(x, plan, metric);
    Csv by_size(o.seed, {"size", "replicate", metric_name});
    std::vector<std::vector<double>> per(plan.sizes.size());
    std::vector<double> px, py;
    for (std::size_t k = 0; k < rows.size(); ++k) {
        by_size.row({cell(rows[k].size), cell(rows[k].replicate), cell(rows[k].value)});
        per[k / plan.replicates].push_back(rows[k].value);
        px.push_back(static_cast<double>(rows[k].size));
        py.push_back(rows[k].value);
    }
    const auto summary = summarize_by_size(plan.sizes, per);
    w.csv("by_size.csv", by_size);
    w.csv("by_size_summary.csv", size_summary_csv(o.seed, summary));

    json perm = nullptr;
    if (o.permutations > 0) {
        const auto pt = permutation_test(metric, x, o.permutations, o.seed, gender ? Better::higher : Better::lower);
        Csv null(o.seed, {"permutation", metric_name});
        for (std::size_t p = 0; p < pt.null.size(); ++p) null.row({cell(p), cell(pt.null[p])});
        w.csv("permutation_null.csv", null);
        perm = {{"permutations", o.permutations},
                {"observed", pt.observed},
                {"p_value", pt.p_value},
                {"null_min", *std::min_element(pt.null.begin(), pt.null.end())},
                {"null_max", *std::max_element(pt.null.begin(), pt.null.end())},
                {"null_mean", mean(pt.null)}};
    }
    w.json("summary.json", {{"task", gender ? "gender" : "viewpoint"},
                            {"metric", metric_name},
                            {metric_name, full},
                            {"images", x.rows()},
                            {"folds", folds.size()},
                            {"held_out_identities", o.held_out},
                            {"equal_priors", gender ? json(o.equal_priors) : json(nullptr)},
                            {"by_size", size_summary_json(summary)},
                            {"permutation_test", perm}});
    auto p = size_plot(gender ? "Gender classification vs. subspace size" : "Yaw prediction vs. subspace size",
                       gender ? "accuracy" : "mean absolute error (degrees)", plan.sizes, px, py, summary);
    w.plot("by_size.svg", p);
    std::cout << (gender ? "decode-gender: accuracy " : "decode-view: MAE ") << full << "\n";
}

json pc_class_counts(const std::vector<PcClass>& cls) {
    std::array<std::size_t, pc_class_count> n{};
    for (auto c : cls) ++n[static_cast<std::size_t>(c)];
    json j = json::object();
    for (std::size_t c = 0; c < pc_class_count; ++c) j[to_string(static_cast<PcClass>(c))] = n[c];
    return j;
}

void run_pca(Options& o, const Inputs& in, ArtifactWriter& w) {
    const auto space = build_face_space(in.emb);
    const auto anova = pc_anova_all(space, in.attrs);
    const bool nested = gender_nested_in_identity(in.attrs);
    const auto cls = assign_pcs(anova, nested, o.floor);
    const auto& ev = space.basis.values;
    double total = 0.0;
    for (double v : ev) total += v;

    std::vector<std::string> header{"pc", "eigenvalue", "explained", "cumulative"};
    for (const char* a : {"identity", "gender", "viewpoint"})
        for (const char* f : {"f", "df_between", "df_within", "p", "r2"}) header.push_back(std::string(a) + "_" + f);
    header.push_back("class");
    Csv table(o.seed, header);
    svg::Plot p{"Per-PC effect sizes", "PC", "r^2", false, {}};
    for (std::size_t a = 0; a < 3; ++a)
        p.series.push_back({to_string(static_cast<Attribute>(a)), svg::palette(a), {}, {}, svg::Mark::line});
    double cum = 0.0;
    json best = json::object();
    std::array<std::pair<double, std::size_t>, 3> top{};
    for (std::size_t k = 0; k < ev.size(); ++k) {
        cum += ev[k];
        std::vector<std::string> r{cell(k + 1), cell(ev[k]), cell(total > 0 ? ev[k] / total : 0.0),
                                   cell(total > 0 ? cum / total : 0.0)};
        for (std::size_t a = 0; a < 3; ++a) {
            const auto c = ftest_cells(anova[a][k]);
            r.insert(r.end(), c.begin(), c.end());
            const double r2 = anova[a][k] ? anova[a][k]->r_squared : std::numeric_limits<double>::quiet_NaN();
            p.series[a].x.push_back(static_cast<double>(k + 1));
            p.series[a].y.push_back(r2);
            if (anova[a][k] && r2 > top[a].first) top[a] = {r2, k + 1};
        }
        r.push_back(to_string(cls[k]));
        table.row(r);
    }
    for (std::size_t a = 0; a < 3; ++a)
        best[to_string(static_cast<Attribute>(a))] = {{"pc", top[a].second}, {"r2", top[a].first}};
    w.csv("pc_anova.csv", table);
    w.json("summary.json", {{"images", space.size()},
                            {"dimension", space.dimension()},
                            {"total_variance", total},
                            {"eigenvalues", ev},
                            {"gender_nested_in_identity", nested},
                            {"assignment_floor", o.floor},
                            {"pc_classes", pc_class_counts(cls)},
                            {"max_r2_pc", best}});
    if (o.write_basis) {
        std::vector<std::string> h;
        for (std::size_t k = 0; k < space.dimension(); ++k) h.push_back("pc" + std::to_string(k + 1));
        Csv vec(o.seed, [&] { auto v = h; v.insert(v.begin(), {"unit", "mean"}); return v; }());
        for (std::size_t u = 0; u < space.dimension(); ++u) {
            std::vector<std::string> r{cell(u), cell(space.basis.mean[u])};
            for (double e : space.basis.vectors.row(u)) r.push_back(cell(e));
            vec.row(r);
        }
        w.csv("eigenvectors.csv", vec);
        Csv sc(o.seed, [&] { auto v = h; v.insert(v.begin(), "image_id"); return v; }());
        for (std::size_t i = 0; i < space.size(); ++i) {
            std::vector<std::string> r{space.image_ids[i]};
            for (double e : space.scores.row(i)) r.push_back(cell(e));
            sc.row(r);
        }
        w.csv("factor_scores.csv", sc);
    }
    w.plot("pc_anova.svg", p);
    svg::Series spec{"", svg::palette(4), {}, {}, svg::Mark::line};
    for (std::size_t k = 0; k < ev.size(); ++k) {
        spec.x.push_back(static_cast<double>(k + 1));
        spec.y.push_back(total > 0 ? ev[k] / total : 0.0);
    }
    w.plot("eigenvalues.svg", {"Explained variance", "PC", "fraction of variance", false, {spec}});
    std::cout << "pca: " << space.dimension() << " PCs\n";
}

void run_windows(Options& o, const Inputs& in, ArtifactWriter& w) {
    const auto space = build_face_space(in.emb);
    auto setup = make_window_setup(space, in.attrs, o.held_out, o.seed, o.fraction);
    setup.scoring = score_options(o);
    setup.lda = lda_options(o);
    Csv table(o.seed, {"task", "first_pc", "last_pc", "value"});
    json best = json::object();
    for (Task t : {Task::identity, Task::gender, Task::viewpoint}) {
        const auto pts = sliding_window_predict(space, in.attrs, o.window, t, setup);
        svg::Series s{"", svg::palette(static_cast<std::size_t>(t)), {}, {}, svg::Mark::line};
        std::size_t arg = 0;
        for (std::size_t i = 0; i < pts.size(); ++i) {
            table.row({to_string(t), cell(pts[i].start + 1), cell(pts[i].start + o.window), cell(pts[i].value)});
            s.x.push_back(static_cast<double>(pts[i].start + 1));
            s.y.push_back(pts[i].value);
            const bool better = t == Task::viewpoint ? pts[i].value < pts[arg].value : pts[i].value > pts[arg].value;
            if (better) arg = i;
        }
        best[to_string(t)] = {{"metric", t == Task::identity ? "auc" : t == Task::gender ? "accuracy" : "mae"},
                              {"best_first_pc", pts[arg].start + 1},
                              {"best_value", pts[arg].value},
                              {"first_window_value", pts.front().value},
                              {"last_window_value", pts.back().value}};
        const char* ylab = t == Task::identity ? "verification AUC" : t == Task::gender ? "accuracy" : "MAE (degrees)";
        w.plot(std::string("windows_") + to_string(t) + ".svg",
               {std::string("Sliding windows of ") + std::to_string(o.window) + " PCs: " + to_string(t),
                "first PC of window", ylab, false, {s}});
    }
    w.csv("windows.csv", table);
    w.json("summary.json", {{"window", o.window}, {"windows", space.dimension() - o.window + 1}, {"tasks", best}});
    std::cout << "windows: " << space.dimension() - o.window + 1 << " windows per task\n";
}

void run_directions(Options& o, const Inputs& in, ArtifactWriter& w) {
    const auto space = build_face_space(in.emb);
    const auto rep = attribute_directions(space, in.emb, in.attrs, lda_options(o));
    Csv table(o.seed, {"pc", "identity", "gender", "viewpoint"});
    svg::Plot p{"Attribute directions vs. PCs", "PC", "|cos|", false, {}, 0.0, 1.0};
    svg::Series si{"identity", svg::palette(0), {}, {}, svg::Mark::line}, sg{"gender", svg::palette(1), {}, {}, svg::Mark::line},
        sv{"viewpoint", svg::palette(2), {}, {}, svg::Mark::line};
    auto argmax = [](const std::vector<double>& v) { return std::max_element(v.begin(), v.end()) - v.begin(); };
    for (std::size_t k = 0; k < rep.identity.size(); ++k) {
        table.row({cell(k + 1), cell(rep.identity[k]), cell(rep.gender[k]), cell(rep.viewpoint[k])});
        for (auto* s : {&si, &sg, &sv}) s->x.push_back(static_cast<double>(k + 1));
        si.y.push_back(rep.identity[k]);
        sg.y.push_back(rep.gender[k]);
        sv.y.push_back(rep.viewpoint[k]);
    }
    p.series = {si, sg, sv};
    w.csv("directions.csv", table);
    Csv vecs(o.seed, {"unit", "gender_direction", "viewpoint_direction"});
    for (std::size_t u = 0; u < rep.gender_direction.size(); ++u)
        vecs.row({cell(u), cell(rep.gender_direction[u]), cell(rep.viewpoint_direction[u])});
    w.csv("direction_vectors.csv", vecs);
    w.json("summary.json",
           {{"zero_templates", rep.zero_templates},
            {"max_pc", {{"identity", argmax(rep.identity) + 1}, {"gender", argmax(rep.gender) + 1}, {"viewpoint", argmax(rep.viewpoint) + 1}}},
            {"max_value",
             {{"identity", rep.identity[argmax(rep.identity)]},
              {"gender", rep.gender[argmax(rep.gender)]},
              {"viewpoint", rep.viewpoint[argmax(rep.viewpoint)]}}}});
    w.plot("directions.svg", p);
    std::cout << "directions: gender direction best matches PC " << argmax(rep.gender) + 1 << "\n";
}

void run_alignment(Options& o, const Inputs& in, ArtifactWriter& w) {
    const auto space = build_face_space(in.emb);
    const auto al = unit_pc_alignment(space);
    const auto cls = assign_pcs(space, in.attrs, o.floor);
    const auto ca = alignment_by_class(al, cls, o.bins);
    const auto overlap = alignment_overlap(ca);

    Csv hist(o.seed, {"class", "bin_lo", "bin_hi", "similarities"});
    svg::Plot p{"Unit-PC similarity by PC class", "|cos(unit, PC)|", "fraction", false, {}};
    for (std::size_t c = 0; c < pc_class_count; ++c) {
        if (ca.pooled[c].empty()) continue;
        const auto h = make_histogram(ca.pooled[c], 0.0, 1.0, o.bins);
        svg::Series s{to_string(static_cast<PcClass>(c)), svg::palette(c), {}, {}, svg::Mark::line};
        for (std::size_t b = 0; b < o.bins; ++b) {
            hist.row({to_string(static_cast<PcClass>(c)), cell(b * h.bin_width()), cell((b + 1) * h.bin_width()),
                      cell(std::size_t(h.counts[b]))});
            s.x.push_back(h.bin_center(b));
            s.y.push_back(static_cast<double>(h.counts[b]) / static_cast<double>(h.total()));
        }
        p.series.push_back(s);
    }
    w.csv("alignment_histogram.csv", hist);
    Csv units(o.seed, {"unit", "max_abs_cos", "best_pc", "sum_sq"});
    for (std::size_t u = 0; u < al.values.rows(); ++u) {
        const auto row = al.values.row(u);
        const auto it = std::max_element(row.begin(), row.end());
        double ss = 0.0;
        for (double e : row) ss += e * e;
        units.row({cell(u), cell(*it), cell(static_cast<std::size_t>(it - row.begin()) + 1), cell(ss)});
    }
    w.csv("unit_alignment.csv", units);
    json tests = json::array();
    for (const auto& t : overlap)
        tests.push_back({{"a", to_string(t.a)}, {"b", to_string(t.b)}, {"ks_statistic", t.ks.statistic}, {"p_value", t.ks.p_value}});
    w.json("summary.json", {{"completeness_error", al.completeness_error()},
                            {"pc_classes", pc_class_counts(cls)},
                            {"assignment_floor", o.floor},
                            {"bins", o.bins},
                            {"ks_tests", tests}});
    w.plot("alignment.svg", p);
    std::cout << "alignment: completeness error " << al.completeness_error() << "\n";
}

// Bundles every analysis summary found under the output root.
void run_report(Options& o, const fs::path& root, ArtifactWriter& w, json& inputs) {
    json analyses = json::object();
    std::vector<std::string> missing;
    std::string html = "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>facespace report</title>\n"
                       "<style>body{font-family:sans-serif;max-width:1000px;margin:auto}pre{background:#f4f4f4;"
                       "padding:8px;overflow:auto}</style></head><body>\n<h1>facespace report</h1>\n";
    for (const auto& cmd : analysis_commands) {
        const fs::path summary = root / cmd / "summary.json";
        if (!fs::is_regular_file(summary)) {
            missing.push_back(cmd);
            continue;
        }
        const std::string bytes = detail::read_file(summary);
        inputs.push_back({{"role", cmd}, {"path", (fs::path(cmd) / "summary.json").generic_string()},
                          {"sha256", sha256_hex(bytes)}, {"bytes", bytes.size()}});
        json s;
        try {
            s = json::parse(bytes);
        } catch (const json::exception& e) {
            throw DataError("report: cannot parse " + summary.string() + ": " + e.what());
        }
        analyses[cmd] = s;
        html += "<h2>" + svg::escape(cmd) + "</h2>\n<pre>" + svg::escape(s.dump(2)) + "</pre>\n";
        // inline any plots listed in that command's manifest
        const fs::path man = root / cmd / "manifest.json";
        if (fs::is_regular_file(man)) {
            const json m = json::parse(detail::read_file(man));
            for (const auto& a : m.at("artifacts")) {
                const std::string f = a.at("file");
                if (f.size() > 4 && f.substr(f.size() - 4) == ".svg") html += detail::read_file(root / cmd / f);
            }
        }
    }
    if (analyses.empty()) throw ConfigError("report: no analysis results under '" + root.string() + "'");
    html += "</body></html>\n";
    w.json("report.json", {{"analyses", analyses}, {"missing", missing}});
    w.text("report.html", html);
    (void)o;
    std::cout << "report: " << analyses.size() << " analyses bundled\n";
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

int fail(ErrorKind kind, const std::string& message) {
    const char* names[] = {"config", "data", "degenerate"};
    const int code = exit_code(kind);
    json e = {{"error", {{"kind", names[static_cast<int>(kind)]}, {"message", message}, {"exit_code", code}}}};
    std::cerr << e.dump() << "\n";
    return code;
}

std::string flag_value(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number_float()) return detail::format_double(v.get<double>());
    if (v.is_array()) {
        std::string s;
        for (const auto& e : v) s += (s.empty() ? "" : ",") + flag_value(e);
        return s;
    }
    return v.dump();
}

// Rebuilds the command line recorded in a manifest; input files must still hash the same.
std::vector<std::string> replay_args(const std::string& manifest_path) {
    if (!fs::is_regular_file(manifest_path)) throw ConfigError("--from-manifest: no such file '" + manifest_path + "'");
    json m;
    try {
        m = json::parse(detail::read_file(manifest_path));
    } catch (const json::exception& e) {
        throw DataError(std::string("manifest: ") + e.what());
    }
    if (!m.contains("command") || !m.contains("config")) throw DataError("manifest: missing command or config");
    for (const auto& in : m.value("inputs", json::array())) {
        if (in.at("role") != "embeddings" && in.at("role") != "attributes") continue;
        const std::string path = in.at("path");
        if (!fs::is_regular_file(path)) throw ConfigError("manifest input missing: " + path);
        if (sha256_hex(detail::read_file(path)) != in.at("sha256"))
            throw DataError("manifest input changed since the recorded run: " + path);
    }
    std::vector<std::string> args{m.at("command").get<std::string>()};
    for (const auto& [k, v] : m.at("config").items()) {
        if (v.is_boolean()) {
            if (v.get<bool>()) args.push_back("--" + k);
            continue;
        }
        if (v.is_null() || (v.is_array() && v.empty())) continue;
        args.push_back("--" + k);
        args.push_back(flag_value(v));
    }
    return args;
}

int run(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    // --from-manifest PATH replaces the command and its recorded flags; only
    // --out and --threads (and the same command name) may accompany it.
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] != "--from-manifest") continue;
        if (i + 1 >= args.size()) throw ConfigError("--from-manifest needs a path");
        auto replay = replay_args(args[i + 1]);
        std::vector<std::string> extra;
        for (std::size_t j = 0; j < args.size(); ++j) {
            if (j == i || j == i + 1) continue;
            if (j == 0 && args[j] == replay.front()) continue; // optional matching command name
            if ((args[j] == "--out" || args[j] == "--threads") && j + 1 < args.size()) {
                extra.push_back(args[j]);
                extra.push_back(args[++j]);
            } else {
                throw ConfigError("--from-manifest accepts only --out and --threads, got '" + args[j] + "'");
            }
        }
        replay.insert(replay.end(), extra.begin(), extra.end());
        args = std::move(replay);
        break;
    }

    Options o;
    CLI::App app{"facespace: embedding-space analysis of face descriptors"};
    app.require_subcommand(1);
    app.set_version_flag("--version", tool_version);
    std::map<std::string, std::unique_ptr<Command>> cmds;
    auto make = [&](const std::string& name, const std::string& help) -> Command& {
        return *(cmds[name] = std::make_unique<Command>(app, name, help));
    };

    {
        auto& c = make("synth", "generate a synthetic dataset with planted structure");
        add_common(c, o, false);
        c.opt("dimension", o.dimension, "descriptor dimension");
        c.opt("identities", o.identities, "number of identities");
        c.opt("images-min", o.images_min, "fewest images per identity");
        c.opt("images-max", o.images_max, "most images per identity");
        c.opt("sigma-identity", o.sigma_identity, "identity centroid scale");
        c.opt("sigma-gender", o.sigma_gender, "gender offset scale");
        c.opt("sigma-view", o.sigma_view, "yaw offset scale (per 90 degrees)");
        c.opt("sigma-noise", o.sigma_noise, "per-image noise scale");
        c.opt("gender-directions", o.gender_directions, "planted gender directions");
        c.opt("view-directions", o.view_directions, "planted yaw directions");
        c.opt("identity-dims", o.identity_dims, "identity subspace dimension (0 = isotropic)");
        c.opt("calibrate-r2", o.calibrate_r2, "tune sigma-noise to this mean per-unit identity r^2 (0 = off)");
        c.opt("format", o.format, "embedding file format: binary or csv")->check(CLI::IsMember({"binary", "csv"}));
    }
    {
        auto& c = make("verify", "cross-gallery verification AUC on all units");
        add_common(c, o, true);
        add_scoring(c, o);
    }
    {
        auto& c = make("ablate", "verification AUC in random unit subspaces");
        add_common(c, o, true);
        add_plan(c, o);
        add_scoring(c, o);
    }
    {
        auto& c = make("anova", "per-unit one-way ANOVA for identity, gender and viewpoint");
        add_common(c, o, true);
        c.opt("alpha", o.alpha, "family-wise significance level");
        c.opt("correction", o.correction, "bonferroni or none")->check(CLI::IsMember({"bonferroni", "none"}));
        c.opt("error-term", o.error_term, "pooled or welch")->check(CLI::IsMember({"pooled", "welch"}));
    }
    {
        auto& c = make("correlate", "distribution of pairwise unit correlations");
        add_common(c, o, true);
    }
    for (const char* name : {"decode-gender", "decode-view"}) {
        const bool g = std::string(name) == "decode-gender";
        auto& c = make(name, g ? "LDA gender classification with identity-held-out folds"
                               : "least-squares yaw regression with identity-held-out folds");
        add_common(c, o, true);
        add_plan(c, o);
        c.opt("held-out", o.held_out, "identities held out per fold");
        c.opt("permutations", o.permutations, "permutation-test draws (0 = skip)");
        if (g) c.flag("equal-priors", o.equal_priors, "midpoint LDA threshold instead of prior-weighted");
    }
    {
        auto& c = make("pca", "face space PCA with per-PC ANOVA");
        add_common(c, o, true);
        c.opt("floor", o.floor, "minimum r^2 for assigning a PC to an attribute");
        c.flag("write-basis", o.write_basis, "also write eigenvectors and factor scores");
    }
    {
        auto& c = make("windows", "identity, gender and yaw prediction from sliding PC windows");
        add_common(c, o, true);
        c.opt("window", o.window, "PCs per window");
        c.opt("held-out", o.held_out, "identities held out per fold");
        add_scoring(c, o);
        c.flag("equal-priors", o.equal_priors, "midpoint LDA threshold instead of prior-weighted");
    }
    {
        auto& c = make("directions", "similarity of identity, gender and yaw directions to each PC");
        add_common(c, o, true);
        c.flag("equal-priors", o.equal_priors, "midpoint LDA threshold instead of prior-weighted");
    }
    {
        auto& c = make("alignment", "similarity of unit axes to PCs, grouped by PC attribute");
        add_common(c, o, true);
        c.opt("floor", o.floor, "minimum r^2 for assigning a PC to an attribute");
        c.opt("bins", o.bins, "histogram bins on [0, 1]");
    }
    {
        auto& c = make("report", "bundle all analysis summaries under --out into report.json/html");
        add_common(c, o, false);
    }

    std::vector<std::string> rev(args.rbegin(), args.rend());
    try {
        app.parse(rev);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return fail(ErrorKind::config, e.what());
    }

    const std::string name = app.get_subcommands().front()->get_name();
    Command& cmd = *cmds.at(name);
    apply_profile(cmd, o);
    if (o.threads < 0) throw ConfigError("--threads must be >= 0");
    set_thread_count(o.threads);

    fs::path root = o.out;
    if (root.empty()) {
        const char* env = std::getenv("FACESPACE_OUT");
        root = env && *env ? env : "facespace-out";
    }
    ArtifactWriter w(root / name, name, o.seed, o.plots);
    json inputs = json::array();

    if (name == "synth") {
        run_synth(o, w);
    } else if (name == "report") {
        run_report(o, root, w, inputs);
    } else {
        Inputs in = load_inputs(o);
        inputs = in.manifest;
        // refuse to write over an input file
        for (const auto& p : in.paths)
            if (p.parent_path() == fs::weakly_canonical(w.dir()))
                throw ConfigError("output directory contains input file " + p.string() + "; choose another --out");
        if (name == "verify") run_verify(o, in, w);
        else if (name == "ablate") run_ablate(o, in, w);
        else if (name == "anova") run_anova(o, in, w);
        else if (name == "correlate") run_correlate(o, in, w);
        else if (name == "decode-gender") run_decode(o, in, w, true);
        else if (name == "decode-view") run_decode(o, in, w, false);
        else if (name == "pca") run_pca(o, in, w);
        else if (name == "windows") run_windows(o, in, w);
        else if (name == "directions") run_directions(o, in, w);
        else if (name == "alignment") run_alignment(o, in, w);
    }
    w.manifest(cmd.config(), inputs);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const facespace::Error& e) {
        return fail(e.kind(), e.what());
    } catch (const fs::filesystem_error& e) {
        return fail(ErrorKind::config, e.what());
    } catch (const std::exception& e) {
        std::cerr << json{{"error", {{"kind", "internal"}, {"message", e.what()}, {"exit_code", 1}}}}.dump() << "\n";
        return 1;
    }
}
