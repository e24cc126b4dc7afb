#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "sml/errors.hpp"
#include "sml/rng.hpp"
#include "sml/stack.hpp"

namespace sml {

// Synthetic cohort generator. Each scan carries two slice clusters: a dim
// cluster A occupying the leading cluster_fraction of slices and a brighter
// cluster B offset by mean_shift. Abnormal scans additionally offset a fixed
// planted pixel subset by label_signal, in cluster-A slices only, so picking
// the wrong cluster downstream loses the label signal. An optional two-level
// base texture (pattern_amplitude > 0, fixed per pixel across the cohort)
// gives the patient-level feature matrix a second structural direction.
struct SynthParams {
    int n_normal = 0;
    int n_abnormal = 0;
    int m_min = 40;
    int m_max = 400;
    int p = 128;
    double cluster_fraction = 0.3;
    double mean_shift = 0.4;
    double label_signal = 0.9;
    double noise_sd = 0.15;
    double signal_pixel_fraction = 0.15;
    double base_intensity = 0.02;    // cluster-A mean; B sits at base + mean_shift
    double pattern_amplitude = 0.0;  // two-level base texture height
    // Brightness ramp across cluster A. When positive, A-slices brighten
    // towards the cluster boundary and the label signal fades in step, so the
    // informative slices sit at the low quantiles and the misclustering error
    // grows with alpha.
    double cluster_ramp = 0.0;
};

namespace detail {
constexpr std::uint64_t kSignalStream = 0x5161;
constexpr std::uint64_t kSliceStream = 0x51cE;
constexpr std::uint64_t kShapeStream = 0x54a9;
constexpr std::uint64_t kPatternStream = 0x9a77;
}  // namespace detail

inline void validate_params(const SynthParams& sp) {
    auto frac = [](double v) { return v > 0.0 && v < 1.0; };
    if (sp.n_normal < 0 || sp.n_abnormal < 0 || sp.n_normal + sp.n_abnormal < 1)
        throw InvalidArgument("synth: need at least one patient");
    if (sp.m_min < 4) throw InvalidArgument("synth: m_min must be >= 4");
    if (sp.m_max < sp.m_min) throw InvalidArgument("synth: m_max must be >= m_min");
    if (sp.p < 2) throw InvalidArgument("synth: p must be >= 2");
    if (!frac(sp.cluster_fraction) || !frac(sp.signal_pixel_fraction))
        throw InvalidArgument("synth: fractions must lie in (0, 1)");
    if (!(sp.noise_sd > 0.0)) throw InvalidArgument("synth: noise_sd must be > 0");
    if (sp.mean_shift < 0.0 || sp.label_signal < 0.0)
        throw InvalidArgument("synth: offsets must be >= 0");
    if (sp.base_intensity < 0.0 || sp.base_intensity >= 1.0)
        throw InvalidArgument("synth: base_intensity must lie in [0, 1)");
    if (sp.pattern_amplitude < 0.0 || sp.base_intensity + sp.pattern_amplitude >= 1.0)
        throw InvalidArgument("synth: pattern_amplitude out of range");
    if (sp.cluster_ramp < 0.0 || (sp.cluster_ramp > 0.0 && sp.cluster_ramp >= sp.mean_shift))
        throw InvalidArgument("synth: cluster_ramp must stay below mean_shift");
}

// Planted signal coordinates (row-major pixel indices), fixed per (params, seed)
// and shared by the whole cohort.
inline std::vector<std::uint8_t> synth_signal_pixels(const SynthParams& sp, std::uint64_t seed) {
    const std::size_t total = static_cast<std::size_t>(sp.p) * sp.p;
    std::vector<std::uint32_t> idx(total);
    std::iota(idx.begin(), idx.end(), 0u);
    Rng rng(derive_seed(seed, detail::kSignalStream));
    for (std::size_t i = total - 1; i > 0; --i) {
        std::size_t j = rng.next_below(i + 1);
        std::swap(idx[i], idx[j]);
    }
    auto count = static_cast<std::size_t>(sp.signal_pixel_fraction * static_cast<double>(total));
    count = std::max<std::size_t>(count, 1);
    std::vector<std::uint8_t> mask(total, 0);
    for (std::size_t i = 0; i < count; ++i) mask[idx[i]] = 1;
    return mask;
}

// One patient's scan; pure function of (params, seed, patient_index, label).
// Slice j draws from its own derived stream, so any slice can be regenerated
// independently and patients can be generated in parallel.
inline ImageStack synth_stack(const SynthParams& sp, std::uint64_t seed, int patient_index,
                              Label label, const std::vector<std::uint8_t>& signal_pixels,
                              std::string patient_id) {
    Rng shape(derive_seed(seed, detail::kShapeStream, static_cast<std::uint64_t>(patient_index)));
    const int m = static_cast<int>(shape.next_int(sp.m_min, sp.m_max));
    const int m_a = std::clamp(static_cast<int>(std::lround(sp.cluster_fraction * m)), 1, m - 1);

    ImageStack stack;
    stack.patient_id = std::move(patient_id);
    stack.m = m;
    stack.p = sp.p;
    stack.data.resize(static_cast<std::size_t>(m) * sp.p * sp.p);

    const std::size_t pixels = stack.slice_size();
    std::vector<double> pattern(pixels, 0.0);
    if (sp.pattern_amplitude > 0.0)
        for (std::size_t i = 0; i < pixels; ++i)
            pattern[i] = sp.pattern_amplitude *
                         static_cast<double>(derive_seed(seed, detail::kPatternStream, i) & 1);

    for (int j = 0; j < m; ++j) {
        Rng rng(derive_seed(seed, detail::kSliceStream, static_cast<std::uint64_t>(patient_index),
                            static_cast<std::uint64_t>(j)));
        const bool in_a = j < m_a;
        double base = sp.base_intensity + (in_a ? 0.0 : sp.mean_shift);
        double strength = sp.label_signal;
        if (in_a && sp.cluster_ramp > 0.0) {
            base += m_a > 1 ? sp.cluster_ramp * j / (m_a - 1) : 0.0;
            strength *= 1.0 - static_cast<double>(j) / m_a;
        }
        const bool signal = in_a && label == Label::abnormal;
        float* out = stack.data.data() + static_cast<std::size_t>(j) * pixels;
        for (std::size_t i = 0; i < pixels; ++i) {
            double v = base + pattern[i] + sp.noise_sd * rng.next_normal();
            if (signal && signal_pixels[i]) v += strength;
            out[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
    }
    return stack;
}

// Full in-memory cohort: normals first, then abnormals. Deterministic for a
// fixed (params, seed).
inline Cohort synth_cohort(const SynthParams& sp, std::uint64_t seed) {
    validate_params(sp);
    auto signal = synth_signal_pixels(sp, seed);
    Cohort cohort;
    cohort.patients.reserve(static_cast<std::size_t>(sp.n_normal) + sp.n_abnormal);
    char buf[32];
    for (int k = 0; k < sp.n_normal + sp.n_abnormal; ++k) {
        Label label = k < sp.n_normal ? Label::normal : Label::abnormal;
        int ordinal = label == Label::normal ? k : k - sp.n_normal;
        std::snprintf(buf, sizeof buf, "%s_%04d", label == Label::normal ? "norm" : "abnm", ordinal);
        cohort.patients.push_back(
            {synth_stack(sp, seed, k, label, signal, buf), label});
    }
    return cohort;
}

// Stratified split helper shared by split_train_test and cross-validation:
// returns (train indices, test indices) over `labels`, deterministic per seed.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(
    const std::vector<Label>& labels, int n_normal_train, int n_abnormal_train,
    std::uint64_t seed) {
    if (n_normal_train < 0 || n_abnormal_train < 0)
        throw InvalidArgument("split: negative training count");
    std::vector<std::size_t> norm, abnm;
    for (std::size_t i = 0; i < labels.size(); ++i)
        (labels[i] == Label::normal ? norm : abnm).push_back(i);
    if (norm.size() < static_cast<std::size_t>(n_normal_train))
        throw InvalidArgument("split: not enough normal patients");
    if (abnm.size() < static_cast<std::size_t>(n_abnormal_train))
        throw InvalidArgument("split: not enough abnormal patients");
    if (norm.size() + abnm.size() ==
        static_cast<std::size_t>(n_normal_train) + static_cast<std::size_t>(n_abnormal_train))
        throw InvalidArgument("split: test set would be empty");

    auto shuffle = [&](std::vector<std::size_t>& v, std::uint64_t stream) {
        Rng rng(derive_seed(seed, stream));
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = rng.next_below(i);
            std::swap(v[i - 1], v[j]);
        }
    };
    shuffle(norm, 0);
    shuffle(abnm, 1);

    std::vector<std::size_t> train, test;
    train.insert(train.end(), norm.begin(), norm.begin() + n_normal_train);
    train.insert(train.end(), abnm.begin(), abnm.begin() + n_abnormal_train);
    test.insert(test.end(), norm.begin() + n_normal_train, norm.end());
    test.insert(test.end(), abnm.begin() + n_abnormal_train, abnm.end());
    std::sort(train.begin(), train.end());
    std::sort(test.begin(), test.end());
    return {std::move(train), std::move(test)};
}

// Disjoint, exhaustive, label-stratified split; the test side must be
// non-empty.
inline std::pair<Cohort, Cohort> split_train_test(const Cohort& cohort, int n_normal_train,
                                                  int n_abnormal_train, std::uint64_t seed) {
    std::vector<Label> labels;
    labels.reserve(cohort.patients.size());
    for (const auto& pt : cohort.patients) labels.push_back(pt.label);
    auto [train_idx, test_idx] = split_indices(labels, n_normal_train, n_abnormal_train, seed);
    Cohort train, test;
    for (auto i : train_idx) train.patients.push_back(cohort.patients[i]);
    for (auto i : test_idx) test.patients.push_back(cohort.patients[i]);
    return {std::move(train), std::move(test)};
}

}  // namespace sml
