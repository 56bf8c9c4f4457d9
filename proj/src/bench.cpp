#include "gridwarm/bench.hpp"

#include "gridwarm/error.hpp"
#include "gridwarm/grid_io.hpp"
#include "gridwarm/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

namespace gridwarm {

using nlohmann::ordered_json;

namespace {

BenchRow solve_row(const Sample& s, const std::string& method, const VoltageState& init, const BenchOptions& opts) {
    const auto r = solve_nr(s.post_case, init, opts.solve);
    BenchRow row;
    row.sample_id = s.id;
    row.init_method = method;
    row.iterations = r.report.iterations;
    row.converged = r.report.converged;
    row.max_mismatch = r.report.max_mismatch;
    row.wall_time = opts.timing ? r.report.wall_time : 0.0;
    return row;
}

double state_mse(const VoltageState& a, const VoltageState& b) {
    double sum = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double dr = a.v_real[i] - b.v_real[i], di = a.v_imag[i] - b.v_imag[i];
        sum += dr * dr + di * di;
    }
    return a.size() > 0 ? sum / static_cast<double>(2 * a.size()) : 0.0;
}

} // namespace

std::vector<BenchRow> run_bench(const std::vector<Sample>& samples, const std::vector<BenchModel>& models,
                                const BenchOptions& opts) {
    std::map<std::string, int> seen{{"flat", 1}, {"vpre", 1}, {"label", 1}};
    for (const auto& m : models)
        if (m.name.empty() || seen[m.name]++ > 0)
            throw Error("bench model names must be unique and not flat, vpre or label (got '" + m.name + "')");
    for (const auto& s : samples)
        if (s.post_case.buses.empty())
            throw Error("sample " + std::to_string(s.id) + " has an empty post case");

    std::vector<std::vector<BenchRow>> per_sample(samples.size());
    parallel_for(samples.size(), opts.jobs, [&](std::size_t j) {
        const auto& s = samples[j];
        auto& out = per_sample[j];
        out.push_back(solve_row(s, "flat", flat_start(s.post_case), opts));
        out.push_back(solve_row(s, "vpre", s.pre_solution, opts));
        for (const auto& m : models) {
            VoltageState init;
            try {
                init = predict(m.model, s);
            } catch (const NumericalError&) {
                BenchRow row;
                row.sample_id = s.id;
                row.init_method = m.name;
                row.max_mismatch = std::numeric_limits<double>::quiet_NaN();
                out.push_back(row);
                continue;
            }
            auto row = solve_row(s, m.name, init, opts);
            row.prediction_mse = state_mse(init, s.label);
            out.push_back(row);
        }
        if (opts.include_label)
            out.push_back(solve_row(s, "label", s.label, opts));
    });

    std::vector<BenchRow> rows;
    for (auto& v : per_sample)
        rows.insert(rows.end(), v.begin(), v.end());
    return rows;
}

// ---------------------------------------------------------------------------
// Summary

double median(std::vector<double> xs) {
    if (xs.empty())
        return std::numeric_limits<double>::quiet_NaN();
    std::sort(xs.begin(), xs.end());
    const auto n = xs.size();
    return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

namespace {

std::vector<std::string> methods_in_order(const std::vector<BenchRow>& rows) {
    std::vector<std::string> out;
    for (const auto& r : rows)
        if (std::find(out.begin(), out.end(), r.init_method) == out.end())
            out.push_back(r.init_method);
    return out;
}

bool is_model(const std::string& m) { return m != "flat" && m != "vpre" && m != "label"; }

} // namespace

Comparison compare(const std::vector<BenchRow>& rows, const std::string& method, const std::string& baseline) {
    std::map<int, const BenchRow*> base, meth;
    for (const auto& r : rows) {
        if (r.init_method == baseline)
            base[r.sample_id] = &r;
        else if (r.init_method == method)
            meth[r.sample_id] = &r;
    }
    Comparison c;
    c.method = method;
    c.baseline = baseline;
    std::vector<double> bi, mi;
    int wins = 0;
    for (const auto& [id, b] : base) {
        const auto it = meth.find(id);
        if (it == meth.end())
            continue;
        const auto* m = it->second;
        if (b->converged && m->converged) {
            bi.push_back(b->iterations);
            mi.push_back(m->iterations);
            wins += m->iterations < b->iterations;
        } else if (b->converged) {
            ++c.baseline_only;
        } else if (m->converged) {
            ++c.method_only;
        }
    }
    c.mutual = static_cast<int>(bi.size());
    if (c.mutual > 0) {
        c.median_baseline = median(bi);
        c.median_method = median(mi);
        c.speedup = c.median_method > 0 ? c.median_baseline / c.median_method
                                        : std::numeric_limits<double>::infinity();
        c.win_rate = static_cast<double>(wins) / c.mutual;
    } else {
        c.median_baseline = c.median_method = c.speedup = std::numeric_limits<double>::quiet_NaN();
    }
    return c;
}

BenchSummary summarize(const std::vector<BenchRow>& rows) {
    BenchSummary s;
    std::vector<int> ids;
    for (const auto& r : rows)
        ids.push_back(r.sample_id);
    std::sort(ids.begin(), ids.end());
    s.sample_count = static_cast<int>(std::unique(ids.begin(), ids.end()) - ids.begin());

    const auto methods = methods_in_order(rows);
    for (const auto& m : methods) {
        MethodStats st;
        st.method = m;
        std::vector<double> it;
        for (const auto& r : rows) {
            if (r.init_method != m)
                continue;
            ++st.runs;
            if (r.converged)
                it.push_back(r.iterations);
        }
        st.converged = static_cast<int>(it.size());
        st.convergence_rate = st.runs ? static_cast<double>(st.converged) / st.runs : 0.0;
        if (!it.empty()) {
            st.median = median(it);
            st.mean = std::accumulate(it.begin(), it.end(), 0.0) / static_cast<double>(it.size());
            double ss = 0;
            for (double x : it)
                ss += (x - st.mean) * (x - st.mean);
            st.std = std::sqrt(ss / static_cast<double>(it.size()));
        } else {
            st.median = st.mean = st.std = std::numeric_limits<double>::quiet_NaN();
        }
        s.methods.push_back(st);
    }
    const bool has_flat = std::find(methods.begin(), methods.end(), "flat") != methods.end();
    const bool has_vpre = std::find(methods.begin(), methods.end(), "vpre") != methods.end();
    for (const auto& m : methods) {
        if (m != "flat" && has_flat)
            s.comparisons.push_back(compare(rows, m, "flat"));
    }
    for (const auto& m : methods)
        if (is_model(m) && has_vpre)
            s.comparisons.push_back(compare(rows, m, "vpre"));
    return s;
}

const MethodStats& BenchSummary::stats(const std::string& method) const {
    for (const auto& m : methods)
        if (m.method == method)
            return m;
    throw Error("no bench rows for method '" + method + "'");
}

const Comparison& BenchSummary::comparison(const std::string& method, const std::string& baseline) const {
    for (const auto& c : comparisons)
        if (c.method == method && c.baseline == baseline)
            return c;
    throw Error("no comparison of '" + method + "' against '" + baseline + "'");
}

namespace {

// NaN and inf have no JSON spelling; they become null.
ordered_json number(double x) { return std::isfinite(x) ? ordered_json(x) : ordered_json(nullptr); }

} // namespace

ordered_json to_json(const BenchSummary& s) {
    ordered_json methods = ordered_json::array();
    for (const auto& m : s.methods)
        methods.push_back({{"method", m.method},
                           {"runs", m.runs},
                           {"converged", m.converged},
                           {"non_converged", m.runs - m.converged},
                           {"convergence_rate", m.convergence_rate},
                           {"median_iterations", number(m.median)},
                           {"mean_iterations", number(m.mean)},
                           {"std_iterations", number(m.std)}});
    ordered_json comps = ordered_json::array();
    for (const auto& c : s.comparisons)
        comps.push_back({{"method", c.method},
                         {"baseline", c.baseline},
                         {"mutually_converged", c.mutual},
                         {"baseline_only_converged", c.baseline_only},
                         {"method_only_converged", c.method_only},
                         {"median_baseline", number(c.median_baseline)},
                         {"median_method", number(c.median_method)},
                         {"speedup", number(c.speedup)},
                         {"win_rate", c.win_rate}});
    return {{"sample_count", s.sample_count}, {"methods", methods}, {"comparisons", comps}};
}

// ---------------------------------------------------------------------------
// Output files

namespace {

std::string fmt(const char* f, double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, x);
    return buf;
}

} // namespace

std::string bench_csv(const std::vector<BenchRow>& rows) {
    std::string out = kBenchCsvHeader;
    out += '\n';
    for (const auto& r : rows) {
        out += std::to_string(r.sample_id) + ',' + r.init_method + ',' + std::to_string(r.iterations) + ',' +
               (r.converged ? "true" : "false") + ',' + fmt("%.9e", r.max_mismatch) + ',';
        if (r.prediction_mse)
            out += fmt("%.9e", *r.prediction_mse);
        out += ',' + fmt("%.6f", r.wall_time) + '\n';
    }
    return out;
}

void emit_csv(const std::vector<BenchRow>& rows, const std::string& path) { write_text_file(path, bench_csv(rows)); }

void emit_report(const BenchSummary& summary, const std::string& path, const ordered_json& extra) {
    ordered_json doc = extra.is_object() ? extra : ordered_json::object();
    const auto body = to_json(summary);
    for (const auto& [k, v] : body.items())
        doc[k] = v;
    write_text_file(path, doc.dump(1) + "\n");
}

namespace {

double quantile(const std::vector<double>& sorted, double q) {
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

} // namespace

std::string bench_svg(const std::vector<BenchRow>& rows) {
    const auto methods = methods_in_order(rows);
    std::map<std::string, std::vector<double>> its;
    double top = 1;
    for (const auto& r : rows)
        if (r.converged) {
            its[r.init_method].push_back(r.iterations);
            top = std::max(top, static_cast<double>(r.iterations));
        }
    top = std::ceil(top * 1.1);

    const double width = 80.0 + 90.0 * static_cast<double>(std::max<std::size_t>(methods.size(), 1));
    const double height = 320, x0 = 60, y0 = 20, plot_h = 260;
    auto ypix = [&](double v) { return y0 + plot_h * (1.0 - v / top); };
    std::ostringstream o;
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
    o << "<text x=\"12\" y=\"" << y0 + plot_h / 2 << "\" transform=\"rotate(-90 12 " << y0 + plot_h / 2
      << ")\" font-size=\"12\" text-anchor=\"middle\">NR iterations</text>\n";
    o << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x0 << "\" y2=\"" << y0 + plot_h
      << "\" stroke=\"black\"/>\n";
    const int ticks = 5;
    for (int t = 0; t <= ticks; ++t) {
        const double v = top * t / ticks;
        o << "<text x=\"" << x0 - 6 << "\" y=\"" << ypix(v) + 4 << "\" font-size=\"10\" text-anchor=\"end\">"
          << fmt("%.1f", v) << "</text>\n";
    }
    for (std::size_t k = 0; k < methods.size(); ++k) {
        const auto& m = methods[k];
        const double cx = x0 + 45.0 + 90.0 * static_cast<double>(k);
        o << "<g class=\"box\" data-method=\"" << m << "\">\n";
        auto xs = its[m];
        std::sort(xs.begin(), xs.end());
        if (!xs.empty()) {
            const double q1 = quantile(xs, 0.25), q2 = quantile(xs, 0.5), q3 = quantile(xs, 0.75);
            o << "<line x1=\"" << cx << "\" y1=\"" << ypix(xs.front()) << "\" x2=\"" << cx << "\" y2=\""
              << ypix(xs.back()) << "\" stroke=\"black\"/>\n";
            o << "<rect x=\"" << cx - 25 << "\" y=\"" << ypix(q3) << "\" width=\"50\" height=\""
              << std::max(ypix(q1) - ypix(q3), 1.0) << "\" fill=\"#9ecae1\" stroke=\"black\"/>\n";
            o << "<line x1=\"" << cx - 25 << "\" y1=\"" << ypix(q2) << "\" x2=\"" << cx + 25 << "\" y2=\"" << ypix(q2)
              << "\" stroke=\"#d62728\" stroke-width=\"2\"/>\n";
        }
        o << "<text x=\"" << cx << "\" y=\"" << y0 + plot_h + 18 << "\" font-size=\"11\" text-anchor=\"middle\">" << m
          << "</text>\n";
        o << "</g>\n";
    }
    o << "</svg>\n";
    return o.str();
}

void emit_svg(const std::vector<BenchRow>& rows, const std::string& path) { write_text_file(path, bench_svg(rows)); }

} // namespace gridwarm
