#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace eegart::dsp {

enum class FilterKind { highpass, bandstop };

struct FilterSpec {
    FilterKind kind = FilterKind::highpass;
    int order = 4;
    double corner_low_hz = 1.0;
    double corner_high_hz = 0.0;  // bandstop only
    double sample_rate_hz = 128.0;

    void validate() const {
        if (order < 1) throw std::invalid_argument("FilterSpec: order must be >= 1");
        if (order > 16) throw std::invalid_argument("FilterSpec: orders above 16 unsupported");
        const double nyq = sample_rate_hz / 2.0;
        if (!(corner_low_hz > 0.0 && corner_low_hz < nyq))
            throw std::invalid_argument("FilterSpec: corner_low_hz outside (0, Nyquist)");
        if (kind == FilterKind::bandstop) {
            if (!(corner_high_hz > 0.0 && corner_high_hz < nyq))
                throw std::invalid_argument("FilterSpec: corner_high_hz outside (0, Nyquist)");
            if (!(corner_low_hz < corner_high_hz))
                throw std::invalid_argument("FilterSpec: bandstop requires corner_low < corner_high");
        }
    }
};

struct Biquad {
    double b0 = 1.0, b1 = 0.0, b2 = 0.0;
    double a1 = 0.0, a2 = 0.0;  // denominator, a0 normalized to 1

    bool stable() const {
        // poles of z^2 + a1 z + a2 inside the unit circle
        return std::abs(a2) < 1.0 && std::abs(a1) < 1.0 + a2;
    }
};

struct BiquadCascade {
    std::vector<Biquad> sections;
    double gain = 1.0;

    std::complex<double> response_at(double freq_hz, double fs) const {
        const std::complex<double> z = std::polar(1.0, 2.0 * M_PI * freq_hz / fs);
        const std::complex<double> zi = 1.0 / z;
        std::complex<double> h = gain;
        for (const auto& s : sections) {
            h *= (s.b0 + s.b1 * zi + s.b2 * zi * zi) /
                 (1.0 + s.a1 * zi + s.a2 * zi * zi);
        }
        return h;
    }

    double magnitude_db(double freq_hz, double fs) const {
        return 20.0 * std::log10(std::abs(response_at(freq_hz, fs)));
    }

    int total_order() const { return 2 * static_cast<int>(sections.size()); }
};

namespace detail {

using cplx = std::complex<double>;

struct Zpk {
    std::vector<cplx> z, p;
    double k = 1.0;
};

inline Zpk butter_prototype(int order) {
    Zpk out;
    for (int i = 0; i < order; ++i) {
        const double theta = M_PI * (2.0 * i + 1.0) / (2.0 * order) + M_PI / 2.0;
        out.p.emplace_back(std::cos(theta), std::sin(theta));
    }
    out.k = 1.0;
    return out;
}

inline cplx prod_neg(const std::vector<cplx>& v) {
    cplx acc(1.0, 0.0);
    for (const auto& x : v) acc *= -x;
    return acc;
}

inline Zpk lp_to_hp(const Zpk& in, double w0) {
    Zpk out;
    const size_t degree = in.p.size() - in.z.size();
    for (const auto& z : in.z) out.z.push_back(w0 / z);
    for (const auto& p : in.p) out.p.push_back(w0 / p);
    for (size_t i = 0; i < degree; ++i) out.z.emplace_back(0.0, 0.0);
    out.k = in.k * std::real(prod_neg(in.z) / prod_neg(in.p));
    return out;
}

inline Zpk lp_to_bs(const Zpk& in, double w0, double bw) {
    Zpk out;
    const size_t degree = in.p.size() - in.z.size();
    auto shift = [&](const std::vector<cplx>& roots, std::vector<cplx>& dst) {
        for (const auto& r : roots) {
            const cplx hp = (bw / 2.0) / r;
            const cplx s = std::sqrt(hp * hp - cplx(w0 * w0, 0.0));
            dst.push_back(hp + s);
            dst.push_back(hp - s);
        }
    };
    shift(in.z, out.z);
    shift(in.p, out.p);
    for (size_t i = 0; i < degree; ++i) {
        out.z.emplace_back(0.0, w0);
        out.z.emplace_back(0.0, -w0);
    }
    out.k = in.k * std::real(prod_neg(in.z) / prod_neg(in.p));
    return out;
}

inline Zpk bilinear(const Zpk& in, double fs) {
    Zpk out;
    const double fs2 = 2.0 * fs;
    const size_t degree = in.p.size() - in.z.size();
    cplx num(1.0, 0.0), den(1.0, 0.0);
    for (const auto& z : in.z) {
        out.z.push_back((fs2 + z) / (fs2 - z));
        num *= (fs2 - z);
    }
    for (const auto& p : in.p) {
        out.p.push_back((fs2 + p) / (fs2 - p));
        den *= (fs2 - p);
    }
    for (size_t i = 0; i < degree; ++i) out.z.emplace_back(-1.0, 0.0);
    out.k = in.k * std::real(num / den);
    return out;
}

// Split roots into conjugate pairs (upper-half representative) and reals.
inline void split_roots(const std::vector<cplx>& roots,
                        std::vector<cplx>& pairs, std::vector<double>& reals) {
    std::vector<cplx> upper;
    for (const auto& r : roots) {
        if (std::abs(r.imag()) < 1e-12) reals.push_back(r.real());
        else if (r.imag() > 0.0) upper.push_back(r);
    }
    pairs = std::move(upper);
}

// Pair poles and zeros into real-coefficient second-order sections.
inline BiquadCascade zpk_to_sos(const Zpk& zpk) {
    std::vector<cplx> zp, pp;
    std::vector<double> zr, pr;
    split_roots(zpk.z, zp, zr);
    split_roots(zpk.p, pp, pr);

    BiquadCascade cas;
    cas.gain = zpk.k;

    auto take_nearest_pair = [](std::vector<cplx>& pool, cplx ref) -> cplx {
        size_t best = 0;
        double bd = std::numeric_limits<double>::max();
        for (size_t i = 0; i < pool.size(); ++i) {
            const double d = std::abs(pool[i] - ref);
            if (d < bd) { bd = d; best = i; }
        }
        const cplx got = pool[best];
        pool.erase(pool.begin() + best);
        return got;
    };

    // conjugate pole pairs first
    for (const auto& p : pp) {
        Biquad s;
        s.a1 = -2.0 * p.real();
        s.a2 = std::norm(p);
        if (!zp.empty()) {
            const cplx z = take_nearest_pair(zp, p);
            s.b0 = 1.0; s.b1 = -2.0 * z.real(); s.b2 = std::norm(z);
        } else if (zr.size() >= 2) {
            const double z0 = zr.back(); zr.pop_back();
            const double z1 = zr.back(); zr.pop_back();
            s.b0 = 1.0; s.b1 = -(z0 + z1); s.b2 = z0 * z1;
        } else if (zr.size() == 1) {
            const double z0 = zr.back(); zr.pop_back();
            s.b0 = 1.0; s.b1 = -z0; s.b2 = 0.0;
        } else {
            s.b0 = 1.0;
        }
        cas.sections.push_back(s);
    }
    // leftover real poles, two per section
    while (!pr.empty()) {
        Biquad s;
        const double p0 = pr.back(); pr.pop_back();
        if (!pr.empty()) {
            const double p1 = pr.back(); pr.pop_back();
            s.a1 = -(p0 + p1); s.a2 = p0 * p1;
        } else {
            s.a1 = -p0; s.a2 = 0.0;
        }
        if (zr.size() >= 2) {
            const double z0 = zr.back(); zr.pop_back();
            const double z1 = zr.back(); zr.pop_back();
            s.b0 = 1.0; s.b1 = -(z0 + z1); s.b2 = z0 * z1;
        } else if (zr.size() == 1) {
            const double z0 = zr.back(); zr.pop_back();
            s.b0 = 1.0; s.b1 = -z0; s.b2 = 0.0;
        } else if (!zp.empty()) {
            const cplx z = take_nearest_pair(zp, cplx(p0, 0.0));
            s.b0 = 1.0; s.b1 = -2.0 * z.real(); s.b2 = std::norm(z);
        } else {
            s.b0 = 1.0;
        }
        cas.sections.push_back(s);
    }
    return cas;
}

}  // namespace detail

// Butterworth design via analog prototype + bilinear transform with
// frequency pre-warping.
inline BiquadCascade design_filter(const FilterSpec& spec) {
    spec.validate();
    const double fs = spec.sample_rate_hz;
    auto warp = [&](double f) { return 2.0 * fs * std::tan(M_PI * f / fs); };

    detail::Zpk proto = detail::butter_prototype(spec.order);
    detail::Zpk analog;
    if (spec.kind == FilterKind::highpass) {
        analog = detail::lp_to_hp(proto, warp(spec.corner_low_hz));
    } else {
        const double w1 = warp(spec.corner_low_hz);
        const double w2 = warp(spec.corner_high_hz);
        analog = detail::lp_to_bs(proto, std::sqrt(w1 * w2), w2 - w1);
    }
    BiquadCascade cas = detail::zpk_to_sos(detail::bilinear(analog, fs));
    for (const auto& s : cas.sections) {
        if (!s.stable())
            throw std::runtime_error("design_filter: produced an unstable section");
    }
    return cas;
}

namespace detail {

// Steady-state internal state of one DF2T section for a unit step input.
inline std::pair<double, double> section_step_state(const Biquad& s) {
    const double g = (s.b0 + s.b1 + s.b2) / (1.0 + s.a1 + s.a2);
    return {g - s.b0, s.b2 - s.a2 * g};
}

inline void run_section(const Biquad& s, std::vector<double>& x, double x0_scale) {
    auto [z1s, z2s] = section_step_state(s);
    double z1 = z1s * x0_scale, z2 = z2s * x0_scale;
    for (double& v : x) {
        const double y = s.b0 * v + z1;
        z1 = s.b1 * v - s.a1 * y + z2;
        z2 = s.b2 * v - s.a2 * y;
        v = y;
    }
}

inline void run_cascade(const BiquadCascade& f, std::vector<double>& x) {
    const double x0 = x.empty() ? 0.0 : x.front();
    double scale = x0;
    for (const auto& s : f.sections) {
        run_section(s, x, scale);
        scale *= (s.b0 + s.b1 + s.b2) / (1.0 + s.a1 + s.a2);
    }
    for (double& v : x) v *= f.gain;
}

}  // namespace detail

// Forward-backward (zero-phase) filtering with odd-reflection edge padding.
// Effective magnitude response is |H|^2.
inline std::vector<double> apply_filter_zero_phase(std::span<const double> x,
                                                   const BiquadCascade& f) {
    const size_t padlen = 3 * static_cast<size_t>(f.total_order() + 1);
    if (x.size() <= padlen)
        throw std::invalid_argument(
            "apply_filter_zero_phase: signal too short (need > " +
            std::to_string(padlen) + " samples)");

    std::vector<double> ext;
    ext.reserve(x.size() + 2 * padlen);
    for (size_t i = padlen; i >= 1; --i) ext.push_back(2.0 * x.front() - x[i]);
    ext.insert(ext.end(), x.begin(), x.end());
    for (size_t i = 1; i <= padlen; ++i)
        ext.push_back(2.0 * x.back() - x[x.size() - 1 - i]);

    detail::run_cascade(f, ext);
    std::reverse(ext.begin(), ext.end());
    detail::run_cascade(f, ext);
    std::reverse(ext.begin(), ext.end());

    return std::vector<double>(ext.begin() + padlen, ext.begin() + padlen + x.size());
}

// Windowed-sinc (Kaiser, beta=8) resampler.  Downsampling only; anti-alias
// cutoff at 0.45 * to_hz.
inline std::vector<double> resample(std::span<const double> x, double from_hz,
                                    double to_hz = 128.0) {
    if (from_hz < to_hz)
        throw std::invalid_argument("resample: upsampling unsupported (from_hz < to_hz)");
    const size_t n_out = static_cast<size_t>(
        std::llround(static_cast<double>(x.size()) * to_hz / from_hz));
    if (from_hz == to_hz) return std::vector<double>(x.begin(), x.end());

    const double fc = 0.45 * to_hz / from_hz;  // cycles per input sample
    const double beta = 8.0;
    const int half_width = 32;                 // input samples per side

    auto bessel_i0 = [](double v) {
        double sum = 1.0, term = 1.0;
        for (int k = 1; k < 64; ++k) {
            term *= (v / (2.0 * k)) * (v / (2.0 * k));
            sum += term;
            if (term < 1e-18 * sum) break;
        }
        return sum;
    };
    const double i0_beta = bessel_i0(beta);
    auto kernel = [&](double tau) {
        const double u = tau / half_width;
        if (std::abs(u) >= 1.0) return 0.0;
        const double window = bessel_i0(beta * std::sqrt(1.0 - u * u)) / i0_beta;
        const double arg = 2.0 * M_PI * fc * tau;
        const double sinc = (std::abs(arg) < 1e-12) ? 1.0 : std::sin(arg) / arg;
        return 2.0 * fc * sinc * window;
    };

    std::vector<double> out(n_out, 0.0);
    const double step = from_hz / to_hz;
    for (size_t m = 0; m < n_out; ++m) {
        const double t = m * step;
        const long lo = static_cast<long>(std::ceil(t - half_width));
        const long hi = static_cast<long>(std::floor(t + half_width));
        double acc = 0.0, wsum = 0.0;
        for (long n = lo; n <= hi; ++n) {
            const double w = kernel(t - n);
            wsum += w;
            if (n >= 0 && n < static_cast<long>(x.size())) acc += w * x[n];
        }
        out[m] = (wsum != 0.0) ? acc / wsum : 0.0;
    }
    return out;
}

struct WindowPlan {
    int window_len_s = 1;          // in {1, 3, 5}
    double local_seg_len_s = 0.5;
    double local_overlap = 0.25;
    int sample_rate_hz = 128;

    int window_samples() const { return window_len_s * sample_rate_hz; }
    int local_seg_samples() const {
        return static_cast<int>(std::lround(local_seg_len_s * sample_rate_hz));
    }
    int hop_samples() const {
        return static_cast<int>(std::lround(local_seg_len_s * (1.0 - local_overlap) *
                                            sample_rate_hz));
    }
    int n_local_segments() const {
        return (window_samples() - local_seg_samples()) / hop_samples() + 1;
    }

    void validate() const {
        if (window_len_s != 1 && window_len_s != 3 && window_len_s != 5)
            throw std::invalid_argument("WindowPlan: window_len_s must be 1, 3 or 5");
    }
};

// Non-overlapping consecutive windows; trailing remainder dropped.
inline std::vector<std::vector<double>> extract_windows(std::span<const double> x,
                                                        const WindowPlan& plan) {
    plan.validate();
    const size_t w = static_cast<size_t>(plan.window_samples());
    std::vector<std::vector<double>> out;
    for (size_t start = 0; start + w <= x.size(); start += w)
        out.emplace_back(x.begin() + start, x.begin() + start + w);
    return out;
}

// 64-sample local segments at hop 48 (0.5 s, 25% overlap at 128 Hz).
inline std::vector<std::vector<double>> extract_local_segments(
    std::span<const double> window, const WindowPlan& plan) {
    plan.validate();
    if (static_cast<int>(window.size()) != plan.window_samples())
        throw std::invalid_argument(
            "extract_local_segments: window length does not match plan");
    const int seg = plan.local_seg_samples();
    const int hop = plan.hop_samples();
    std::vector<std::vector<double>> out;
    for (int start = 0; start + seg <= static_cast<int>(window.size()); start += hop)
        out.emplace_back(window.begin() + start, window.begin() + start + seg);
    return out;
}

}  // namespace eegart::dsp
