#include "chorus/shiftlab.hpp"

#include <algorithm>
#include <cmath>

#include "chorus/kernels.hpp"
#include "chorus/rng.hpp"
#include "chorus/text.hpp"

namespace chorus::shiftlab {

namespace {

constexpr uint64_t kClassTableTag = 0xC1A55;
constexpr uint64_t kMixTag = 0xA11CE;
constexpr uint64_t kSampleTagBase = 0x5A000000;
constexpr uint64_t kMedianSeed = 0x51D3CA7;

struct SinusoidParams {
    double freq[2];
    double amp[2];
    double phase[2];
};

// Class/channel sinusoid table: frequency grids keep classes apart, seeded
// jitter decorrelates channels.
std::vector<SinusoidParams> class_table(const SyntheticSpec& spec) {
    std::vector<SinusoidParams> table(static_cast<size_t>(spec.classes * spec.channels));
    rng::RngState rs = rng::substream(spec.seed, rng::kData, kClassTableTag);
    for (int64_t k = 0; k < spec.classes; ++k) {
        for (int64_t c = 0; c < spec.channels; ++c) {
            SinusoidParams& p = table[static_cast<size_t>(k * spec.channels + c)];
            p.freq[0] = 2.5 + 1.35 * static_cast<double>(k) + rs.next_uniform(-0.15, 0.15);
            p.freq[1] = 9.5 + 1.15 * static_cast<double>(k) + rs.next_uniform(-0.15, 0.15);
            p.amp[0] = rs.next_uniform(0.7, 1.0);
            p.amp[1] = rs.next_uniform(0.4, 0.7);
            p.phase[0] = rs.next_uniform(0.0, 6.283185307179586);
            p.phase[1] = rs.next_uniform(0.0, 6.283185307179586);
        }
    }
    return table;
}

// exp(A) by scaled power series; A is CxC row-major, small.
std::vector<double> expm(const std::vector<double>& A, int64_t C) {
    std::vector<double> M(static_cast<size_t>(C * C), 0.0);
    std::vector<double> term(static_cast<size_t>(C * C), 0.0);
    for (int64_t i = 0; i < C; ++i) {
        M[static_cast<size_t>(i * C + i)] = 1.0;
        term[static_cast<size_t>(i * C + i)] = 1.0;
    }
    std::vector<double> next(static_cast<size_t>(C * C));
    for (int n = 1; n <= 64; ++n) {
        for (int64_t i = 0; i < C; ++i) {
            for (int64_t j = 0; j < C; ++j) {
                double acc = 0.0;
                for (int64_t k = 0; k < C; ++k) {
                    acc += term[static_cast<size_t>(i * C + k)] * A[static_cast<size_t>(k * C + j)];
                }
                next[static_cast<size_t>(i * C + j)] = acc / static_cast<double>(n);
            }
        }
        term = next;
        double maxabs = 0.0;
        for (int64_t i = 0; i < C * C; ++i) {
            M[static_cast<size_t>(i)] += term[static_cast<size_t>(i)];
            maxabs = std::max(maxabs, std::fabs(term[static_cast<size_t>(i)]));
        }
        if (maxabs < 1e-16) break;
    }
    return M;
}

// Skew-symmetric generator of the context rotation, fixed per dataset seed.
std::vector<double> mixing_generator(const SyntheticSpec& spec) {
    const int64_t C = spec.channels;
    std::vector<double> A(static_cast<size_t>(C * C), 0.0);
    rng::RngState rs = rng::substream(spec.seed, rng::kData, kMixTag);
    double fro = 0.0;
    for (int64_t i = 0; i < C; ++i) {
        for (int64_t j = i + 1; j < C; ++j) {
            const double v = rs.next_normal();
            A[static_cast<size_t>(i * C + j)] = v;
            A[static_cast<size_t>(j * C + i)] = -v;
            fro += 2.0 * v * v;
        }
    }
    fro = std::sqrt(fro);
    if (fro > 0.0) {
        const double scale = spec.mix_strength / fro;
        for (double& v : A) v *= scale;
    }
    return A;
}

void validate_spec(const SyntheticSpec& spec) {
    if (spec.classes <= 0 || spec.channels <= 0 || spec.length <= 0) {
        throw ConfigError("synthetic spec: classes, channels and length must be positive");
    }
    if (spec.samples_per_cell <= 0) throw ConfigError("synthetic spec: samples_per_cell must be positive");
    if (spec.contexts.empty()) throw ConfigError("synthetic spec: at least one context required");
    for (const auto& c : spec.contexts) {
        if (c.shift < 0.0 || c.shift > 1.0) {
            throw ConfigError("synthetic spec: context '" + c.name + "' shift must be in [0,1]");
        }
        if (c.noise < 0.0) throw ConfigError("synthetic spec: context '" + c.name + "' noise must be >= 0");
    }
}

void fill_clean(const SyntheticSpec& spec, const std::vector<SinusoidParams>& table,
                int64_t class_idx, int64_t uid, std::vector<double>& out,
                rng::RngState& rs) {
    const int64_t C = spec.channels, T = spec.length;
    const double amp_scale = rs.next_uniform(0.85, 1.15);
    const double pj0 = rs.next_uniform(-0.9, 0.9);
    const double pj1 = rs.next_uniform(-0.9, 0.9);
    for (int64_t c = 0; c < C; ++c) {
        const SinusoidParams& p = table[static_cast<size_t>(class_idx * C + c)];
        for (int64_t t = 0; t < T; ++t) {
            const double ph = 6.283185307179586 * static_cast<double>(t) / static_cast<double>(T);
            const double v = amp_scale * (p.amp[0] * std::sin(p.freq[0] * ph + p.phase[0] + pj0) +
                                          p.amp[1] * std::sin(p.freq[1] * ph + p.phase[1] + pj1));
            out[static_cast<size_t>(c * T + t)] = v;
        }
    }
    (void)uid;
}

}  // namespace

SyntheticSpec default_spec(uint64_t seed) {
    SyntheticSpec spec;
    spec.seed = seed;
    spec.contexts = {
        {"left pocket", 0.10, 1.0, 0.1},
        {"right pocket", 0.15, 1.0, 0.1},
        {"upper arm", 0.20, 1.0, 0.1},
        {"wrist", 0.50, 1.0, 0.1},
        {"belt", 0.90, 1.0, 0.1},
    };
    return spec;
}

int Dataset::context_index(const std::string& name) const {
    for (size_t i = 0; i < context_specs.size(); ++i) {
        if (context_specs[i].name == name) return static_cast<int>(i);
    }
    throw ConfigError("unknown context name '" + name + "'");
}

DatasetView make_view(const Dataset& ds, const std::vector<std::string>& context_names,
                      bool training) {
    DatasetView view;
    view.ds = &ds;
    view.training = training;
    for (const auto& name : context_names) {
        const int idx = ds.context_index(name);
        const auto& ids = ds.by_context[static_cast<size_t>(idx)];
        view.indices.insert(view.indices.end(), ids.begin(), ids.end());
    }
    return view;
}

Tensor clean_segment(const SyntheticSpec& spec, int64_t class_idx, int64_t sample_uid) {
    validate_spec(spec);
    const auto table = class_table(spec);
    std::vector<double> clean(static_cast<size_t>(spec.channels * spec.length));
    rng::RngState rs = rng::substream(spec.seed, rng::kData, kSampleTagBase + static_cast<uint64_t>(sample_uid));
    fill_clean(spec, table, class_idx, sample_uid, clean, rs);
    Tensor out({spec.channels, spec.length});
    for (int64_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(clean[static_cast<size_t>(i)]);
    return out;
}

Dataset generate_dataset(const SyntheticSpec& spec) {
    validate_spec(spec);
    Dataset ds;
    ds.spec = spec;
    ds.context_specs = spec.contexts;
    ds.train_reads.assign(spec.contexts.size(), 0);

    for (const auto& c : spec.contexts) {
        ds.contexts.push_back(make_context_record(c.name, c.name, text::kDefaultTextDim));
    }

    const auto table = class_table(spec);
    const auto A = mixing_generator(spec);
    const int64_t C = spec.channels, T = spec.length, K = spec.classes;
    const int64_t per_cell = spec.samples_per_cell;
    const int64_t n_ctx = static_cast<int64_t>(spec.contexts.size());
    const int64_t total = n_ctx * K * per_cell;

    // Per-context mixing matrix exp(s * A) scaled by gain.
    std::vector<std::vector<double>> mix(static_cast<size_t>(n_ctx));
    for (int64_t ci = 0; ci < n_ctx; ++ci) {
        std::vector<double> sA(A.size());
        for (size_t i = 0; i < A.size(); ++i) sA[i] = A[i] * spec.contexts[static_cast<size_t>(ci)].shift;
        mix[static_cast<size_t>(ci)] = expm(sA, C);
        for (double& v : mix[static_cast<size_t>(ci)]) v *= spec.contexts[static_cast<size_t>(ci)].gain;
    }

    ds.samples.resize(static_cast<size_t>(total));
    ds.by_context.assign(static_cast<size_t>(n_ctx), {});
    for (int64_t ci = 0; ci < n_ctx; ++ci) {
        auto& ids = ds.by_context[static_cast<size_t>(ci)];
        ids.reserve(static_cast<size_t>(K * per_cell));
        for (int64_t k = 0; k < K; ++k) {
            for (int64_t j = 0; j < per_cell; ++j) {
                ids.push_back((ci * K + k) * per_cell + j);
            }
        }
    }

    // Samples are independent given their uid-derived streams.
#pragma omp parallel for schedule(static) num_threads(kernels::max_threads())
    for (int64_t uid = 0; uid < total; ++uid) {
        const int64_t ci = uid / (K * per_cell);
        const int64_t k = (uid / per_cell) % K;
        const ContextSpec& ctx = spec.contexts[static_cast<size_t>(ci)];
        const std::vector<double>& M = mix[static_cast<size_t>(ci)];

        std::vector<double> clean(static_cast<size_t>(C * T));
        rng::RngState rs = rng::substream(spec.seed, rng::kData, kSampleTagBase + static_cast<uint64_t>(uid));
        fill_clean(spec, table, k, uid, clean, rs);

        Sample s;
        s.values = Tensor({C, T});
        s.context = static_cast<int32_t>(ci);
        s.label = static_cast<int32_t>(k);
        for (int64_t c = 0; c < C; ++c) {
            for (int64_t t = 0; t < T; ++t) {
                double v = 0.0;
                for (int64_t c2 = 0; c2 < C; ++c2) {
                    v += M[static_cast<size_t>(c * C + c2)] * clean[static_cast<size_t>(c2 * T + t)];
                }
                if (ctx.noise > 0.0) v += ctx.noise * rs.next_normal();
                s.values[c * T + t] = static_cast<float>(v);
            }
        }
        ds.samples[static_cast<size_t>(uid)] = std::move(s);
    }
    return ds;
}

// ---------------------------------------------------------------------------
// MMD
// ---------------------------------------------------------------------------

double median_heuristic(const std::vector<double>& points, int64_t n, int64_t d) {
    if (n < 2) throw ContractViolation("median_heuristic: need at least 2 points");
    std::vector<int64_t> ids(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) ids[static_cast<size_t>(i)] = i;
    constexpr int64_t kCap = 2000;
    if (n > kCap) {
        rng::RngState rs(kMedianSeed, rng::kMedian);
        rs.shuffle(ids);
        ids.resize(static_cast<size_t>(kCap));
        std::sort(ids.begin(), ids.end());
    }
    const int64_t m = static_cast<int64_t>(ids.size());
    std::vector<double> dists;
    dists.reserve(static_cast<size_t>(m * (m - 1) / 2));
    for (int64_t a = 0; a < m; ++a) {
        for (int64_t b = a + 1; b < m; ++b) {
            const double* pa = points.data() + ids[static_cast<size_t>(a)] * d;
            const double* pb = points.data() + ids[static_cast<size_t>(b)] * d;
            double sq = 0.0;
            for (int64_t k = 0; k < d; ++k) {
                const double diff = pa[k] - pb[k];
                sq += diff * diff;
            }
            dists.push_back(std::sqrt(sq));
        }
    }
    std::sort(dists.begin(), dists.end());
    const size_t sz = dists.size();
    double med;
    if (sz % 2 == 1) {
        med = dists[sz / 2];
    } else {
        med = 0.5 * (dists[sz / 2 - 1] + dists[sz / 2]);
    }
    return med > 1e-6 ? med : 1e-6;
}

MmdResult mmd(const std::vector<double>& X, int64_t m, const std::vector<double>& Y, int64_t n,
              int64_t d, double sigma, MmdKind kind) {
    if (!(sigma > 0.0)) throw ContractViolation("mmd: sigma must be positive");
    if (kind == MmdKind::Biased) {
        if (m < 1 || n < 1) throw ContractViolation("mmd: biased estimator needs non-empty sets");
    } else {
        if (m < 2 || n < 2) throw ContractViolation("mmd: unbiased estimator needs >= 2 points per set");
    }
    const double kxx = kernels::gauss_kernel_mean(X.data(), m, X.data(), m, d, sigma);
    const double kxy = kernels::gauss_kernel_mean(X.data(), m, Y.data(), n, d, sigma);
    const double kyy = kernels::gauss_kernel_mean(Y.data(), n, Y.data(), n, d, sigma);

    MmdResult out;
    if (kind == MmdKind::Biased) {
        out.mmd2 = kxx - 2.0 * kxy + kyy;
    } else {
        const double md = static_cast<double>(m);
        const double nd = static_cast<double>(n);
        const double sxx = kxx * md * md - md;  // k(a,a) = 1 exactly
        const double syy = kyy * nd * nd - nd;
        out.mmd2 = sxx / (md * (md - 1.0)) + syy / (nd * (nd - 1.0)) - 2.0 * kxy;
    }
    out.value = std::sqrt(std::max(out.mmd2, 0.0));
    return out;
}

namespace {

// cos/sin tables for DFT bins 1..T/2; row-major [bin][t].
struct DftTable {
    int64_t length = 0;
    std::vector<double> cos_t;
    std::vector<double> sin_t;
};

DftTable build_dft_table(int64_t T) {
    DftTable table;
    table.length = T;
    const int64_t half = T / 2;
    table.cos_t.resize(static_cast<size_t>(half * T));
    table.sin_t.resize(static_cast<size_t>(half * T));
    for (int64_t bin = 1; bin <= half; ++bin) {
        const double w = -6.283185307179586 * static_cast<double>(bin) / static_cast<double>(T);
        for (int64_t t = 0; t < T; ++t) {
            table.cos_t[static_cast<size_t>((bin - 1) * T + t)] = std::cos(w * static_cast<double>(t));
            table.sin_t[static_cast<size_t>((bin - 1) * T + t)] = std::sin(w * static_cast<double>(t));
        }
    }
    return table;
}

std::vector<double> summary_features_with(const Tensor& segment, const DftTable& table) {
    const int64_t C = segment.dim(0), T = segment.dim(1);
    const int64_t half = T / 2;
    const int64_t bands = 4;
    std::vector<double> out;
    out.reserve(static_cast<size_t>(C * (2 + bands)));
    for (int64_t c = 0; c < C; ++c) {
        const float* row = segment.data() + c * T;
        double mean = 0.0;
        for (int64_t t = 0; t < T; ++t) mean += static_cast<double>(row[t]);
        mean /= static_cast<double>(T);
        double var = 0.0;
        for (int64_t t = 0; t < T; ++t) {
            const double diff = static_cast<double>(row[t]) - mean;
            var += diff * diff;
        }
        var /= static_cast<double>(T);
        out.push_back(mean);
        out.push_back(std::sqrt(var));

        // Plain DFT magnitudes over bins 1..T/2 binned into 4 equal bands.
        std::vector<double> band(static_cast<size_t>(bands), 0.0);
        for (int64_t bin = 1; bin <= half; ++bin) {
            double re = 0.0, im = 0.0;
            const double* ct = table.cos_t.data() + (bin - 1) * T;
            const double* st = table.sin_t.data() + (bin - 1) * T;
            for (int64_t t = 0; t < T; ++t) {
                re += static_cast<double>(row[t]) * ct[t];
                im += static_cast<double>(row[t]) * st[t];
            }
            const int64_t b = std::min((bin - 1) * bands / half, bands - 1);
            band[static_cast<size_t>(b)] += (re * re + im * im) / (static_cast<double>(T) * static_cast<double>(T));
        }
        for (double e : band) out.push_back(e);
    }
    return out;
}

}  // namespace

std::vector<double> summary_features(const Tensor& segment) {
    return summary_features_with(segment, build_dft_table(segment.dim(1)));
}

std::vector<double> feature_matrix(const Dataset& ds, const std::vector<int64_t>& indices,
                                   FeatureKind kind, int64_t* out_dim) {
    if (indices.empty()) throw ContractViolation("feature_matrix: empty index set");
    std::vector<double> rows;
    int64_t dim = 0;
    if (kind == FeatureKind::Summary) {
        dim = ds.spec.channels * 6;
        rows.resize(indices.size() * static_cast<size_t>(dim));
        const DftTable table = build_dft_table(ds.spec.length);
#pragma omp parallel for schedule(static) num_threads(kernels::max_threads())
        for (int64_t i = 0; i < static_cast<int64_t>(indices.size()); ++i) {
            const auto f =
                summary_features_with(ds.read(indices[static_cast<size_t>(i)], false).values, table);
            std::copy(f.begin(), f.end(), rows.begin() + static_cast<size_t>(i) * static_cast<size_t>(dim));
        }
    } else {
        dim = ds.spec.channels * ds.spec.length;
        rows.resize(indices.size() * static_cast<size_t>(dim));
        for (size_t i = 0; i < indices.size(); ++i) {
            const Tensor& v = ds.read(indices[i], false).values;
            for (int64_t j = 0; j < dim; ++j) {
                rows[i * static_cast<size_t>(dim) + static_cast<size_t>(j)] = static_cast<double>(v[j]);
            }
        }
    }
    *out_dim = dim;
    return rows;
}

ShiftReport build_tiers(const Dataset& ds, const std::vector<std::string>& source_contexts,
                        const std::vector<std::string>& target_contexts, FeatureKind kind,
                        MmdKind estimator) {
    if (target_contexts.size() < 3) {
        throw ContractViolation("build_tiers: a 3-tier split needs at least 3 target contexts");
    }
    DatasetView source = make_view(ds, source_contexts, false);
    std::vector<DatasetView> targets;
    for (const auto& t : target_contexts) targets.push_back(make_view(ds, {t}, false));

    // Pool everything for normalization stats and the shared bandwidth.
    std::vector<int64_t> pooled = source.indices;
    for (const auto& t : targets) pooled.insert(pooled.end(), t.indices.begin(), t.indices.end());
    int64_t dim = 0;
    std::vector<double> pooled_feats = feature_matrix(ds, pooled, kind, &dim);

    const int64_t n_pool = static_cast<int64_t>(pooled.size());
    std::vector<double> mean(static_cast<size_t>(dim), 0.0), sd(static_cast<size_t>(dim), 0.0);
    for (int64_t i = 0; i < n_pool; ++i)
        for (int64_t j = 0; j < dim; ++j) mean[static_cast<size_t>(j)] += pooled_feats[static_cast<size_t>(i * dim + j)];
    for (double& v : mean) v /= static_cast<double>(n_pool);
    for (int64_t i = 0; i < n_pool; ++i)
        for (int64_t j = 0; j < dim; ++j) {
            const double diff = pooled_feats[static_cast<size_t>(i * dim + j)] - mean[static_cast<size_t>(j)];
            sd[static_cast<size_t>(j)] += diff * diff;
        }
    for (double& v : sd) v = std::max(std::sqrt(v / static_cast<double>(n_pool)), 1e-9);
    for (int64_t i = 0; i < n_pool; ++i)
        for (int64_t j = 0; j < dim; ++j) {
            auto& v = pooled_feats[static_cast<size_t>(i * dim + j)];
            v = (v - mean[static_cast<size_t>(j)]) / sd[static_cast<size_t>(j)];
        }

    ShiftReport report;
    report.sigma = median_heuristic(pooled_feats, n_pool, dim);
    report.estimator = estimator == MmdKind::Biased ? "biased" : "unbiased";
    report.features = kind == FeatureKind::Summary ? "summary" : "raw";

    const int64_t n_src = static_cast<int64_t>(source.indices.size());
    std::vector<double> src_feats(pooled_feats.begin(),
                                  pooled_feats.begin() + static_cast<size_t>(n_src * dim));
    int64_t offset = n_src;
    for (size_t t = 0; t < targets.size(); ++t) {
        const int64_t n_t = static_cast<int64_t>(targets[t].indices.size());
        std::vector<double> tgt_feats(pooled_feats.begin() + static_cast<size_t>(offset * dim),
                                      pooled_feats.begin() + static_cast<size_t>((offset + n_t) * dim));
        offset += n_t;
        const MmdResult r = mmd(src_feats, n_src, tgt_feats, n_t, dim, report.sigma, estimator);
        report.rows.push_back({target_contexts[t], r.value, ""});
    }

    std::sort(report.rows.begin(), report.rows.end(), [](const TierRow& a, const TierRow& b) {
        if (a.mmd != b.mmd) return a.mmd < b.mmd;
        return a.context < b.context;
    });
    for (size_t i = 0; i + 1 < report.rows.size(); ++i) {
        if (report.rows[i].mmd == report.rows[i + 1].mmd) report.tie_break_used = true;
    }
    const int64_t n = static_cast<int64_t>(report.rows.size());
    static const char* kTiers[3] = {"Low", "Mid", "High"};
    for (int64_t i = 0; i < n; ++i) {
        report.rows[static_cast<size_t>(i)].tier = kTiers[i * 3 / n];
    }
    return report;
}

double compute_cm(double perf_low, double perf_high) {
    if (!(perf_low > 0.0)) throw ContractViolation("compute_cm: perf_low must be positive");
    return 1.0 - perf_high / perf_low;
}

RegimeConfig select_regime(double c_m, const RegimeThresholds& thresholds) {
    if (!std::isfinite(c_m)) throw ContractViolation("select_regime: C_m must be finite");
    if (c_m < thresholds.weak_below) return regime_weak();
    if (c_m < thresholds.medium_below) return regime_medium();
    return regime_strong();
}

}  // namespace chorus::shiftlab
