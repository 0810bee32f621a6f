#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include <eegart/dsp.hpp>

using namespace eegart::dsp;

namespace {

FilterSpec highpass_1hz_fs250() {
    FilterSpec s;
    s.kind = FilterKind::highpass;
    s.order = 4;
    s.corner_low_hz = 1.0;
    s.sample_rate_hz = 250.0;
    return s;
}

FilterSpec notch_60hz_fs250() {
    FilterSpec s;
    s.kind = FilterKind::bandstop;
    s.order = 4;
    s.corner_low_hz = 59.0;
    s.corner_high_hz = 61.0;
    s.sample_rate_hz = 250.0;
    return s;
}

std::vector<double> sine(double freq, double fs, size_t n, double amp = 1.0) {
    std::vector<double> x(n);
    for (size_t i = 0; i < n; ++i) x[i] = amp * std::sin(2.0 * M_PI * freq * i / fs);
    return x;
}

double rms(const std::vector<double>& x, size_t skip = 0) {
    double acc = 0.0;
    for (size_t i = skip; i + skip < x.size(); ++i) acc += x[i] * x[i];
    return std::sqrt(acc / static_cast<double>(x.size() - 2 * skip));
}

// least-squares fit of a sin/cos pair at a known frequency
struct SineFit {
    double amplitude;
    double phase_deg;
};

SineFit fit_sine(const std::vector<double>& x, double freq, double fs, size_t skip) {
    double ss = 0.0, sc = 0.0, cs = 0.0;
    double xs = 0.0, xc = 0.0;
    for (size_t i = skip; i + skip < x.size(); ++i) {
        const double s = std::sin(2.0 * M_PI * freq * i / fs);
        const double c = std::cos(2.0 * M_PI * freq * i / fs);
        ss += s * s;
        cs += c * c;
        sc += s * c;
        xs += x[i] * s;
        xc += x[i] * c;
    }
    const double det = ss * cs - sc * sc;
    const double a = (xs * cs - xc * sc) / det;  // sin coefficient
    const double b = (xc * ss - xs * sc) / det;  // cos coefficient
    return {std::hypot(a, b), std::atan2(b, a) * 180.0 / M_PI};
}

}  // namespace

TEST_CASE("highpass design: DC rejection and corner attenuation") {
    const auto f = design_filter(highpass_1hz_fs250());
    CHECK(std::abs(f.response_at(0.0, 250.0)) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(f.magnitude_db(1.0, 250.0) == doctest::Approx(-3.0103).epsilon(0.07));
    CHECK(f.magnitude_db(0.25, 250.0) <= -40.0);
    CHECK(f.magnitude_db(10.0, 250.0) == doctest::Approx(0.0).epsilon(0.01));
}

TEST_CASE("bandstop design: notch depth and passband") {
    const auto f = design_filter(notch_60hz_fs250());
    CHECK(f.magnitude_db(60.0, 250.0) <= -40.0);
    CHECK(f.magnitude_db(50.0, 250.0) >= -1.0);
    CHECK(f.magnitude_db(59.0, 250.0) == doctest::Approx(-3.0103).epsilon(0.2));
    CHECK(f.magnitude_db(61.0, 250.0) == doctest::Approx(-3.0103).epsilon(0.2));
}

TEST_CASE("designed cascades are stable for all supported orders") {
    for (int order = 1; order <= 16; ++order) {
        FilterSpec hp = highpass_1hz_fs250();
        hp.order = order;
        for (const auto& s : design_filter(hp).sections) CHECK(s.stable());
        FilterSpec bs = notch_60hz_fs250();
        bs.order = order;
        for (const auto& s : design_filter(bs).sections) CHECK(s.stable());
    }
}

TEST_CASE("invalid filter specs rejected") {
    FilterSpec s = highpass_1hz_fs250();
    s.corner_low_hz = 125.0;  // at Nyquist
    CHECK_THROWS_AS(design_filter(s), std::invalid_argument);
    s = highpass_1hz_fs250();
    s.order = 17;
    CHECK_THROWS_AS(design_filter(s), std::invalid_argument);
    s = notch_60hz_fs250();
    s.corner_high_hz = 58.0;  // inverted corners
    CHECK_THROWS_AS(design_filter(s), std::invalid_argument);
}

TEST_CASE("zero-phase filtering: constant killed by the highpass") {
    const auto f = design_filter(highpass_1hz_fs250());
    std::vector<double> x(2000, 5.0);
    const auto y = apply_filter_zero_phase(x, f);
    REQUIRE(y.size() == x.size());
    for (double v : y) CHECK(std::abs(v) <= 5.0 * 1e-6);
}

TEST_CASE("zero-phase filtering: 10 Hz sine passes with unit gain, no phase shift") {
    const auto f = design_filter(highpass_1hz_fs250());
    const auto x = sine(10.0, 250.0, 5000);
    const auto y = apply_filter_zero_phase(x, f);
    const auto fit = fit_sine(y, 10.0, 250.0, 250);
    CHECK(fit.amplitude == doctest::Approx(1.0).epsilon(0.01));
    CHECK(std::abs(fit.phase_deg) < 1.0);
}

TEST_CASE("zero-phase filtering: 60 Hz sine removed by the notch") {
    const auto f = design_filter(notch_60hz_fs250());
    const auto x = sine(60.0, 250.0, 5000);
    const auto y = apply_filter_zero_phase(x, f);
    // the narrow notch rings for a few seconds at the edges, so measure well inside
    CHECK(rms(y, 1000) <= 1e-4 * rms(x, 1000));
}

TEST_CASE("zero-phase filtering is linear") {
    const auto f = design_filter(highpass_1hz_fs250());
    std::mt19937_64 rng(7);
    std::normal_distribution<double> dist;
    std::vector<double> x(1500), y(1500), combo(1500);
    const double a = 2.5, b = -1.25;
    for (size_t i = 0; i < x.size(); ++i) {
        x[i] = dist(rng);
        y[i] = dist(rng);
        combo[i] = a * x[i] + b * y[i];
    }
    const auto fx = apply_filter_zero_phase(x, f);
    const auto fy = apply_filter_zero_phase(y, f);
    const auto fc = apply_filter_zero_phase(combo, f);
    double max_ref = 0.0;
    for (double v : fc) max_ref = std::max(max_ref, std::abs(v));
    for (size_t i = 0; i < fc.size(); ++i)
        CHECK(std::abs(fc[i] - (a * fx[i] + b * fy[i])) <= 1e-9 * max_ref);
}

TEST_CASE("zero-phase contract: cross-correlation peak at lag zero") {
    const auto f = design_filter(highpass_1hz_fs250());
    const auto x = sine(7.0, 250.0, 4000);
    const auto y = apply_filter_zero_phase(x, f);
    double best = -1.0;
    int best_lag = -99;
    for (int lag = -5; lag <= 5; ++lag) {
        double acc = 0.0;
        for (size_t i = 500; i + 500 < x.size(); ++i)
            acc += x[i] * y[i + lag];
        if (acc > best) {
            best = acc;
            best_lag = lag;
        }
    }
    CHECK(best_lag == 0);
}

TEST_CASE("too-short signal rejected") {
    const auto f = design_filter(highpass_1hz_fs250());
    std::vector<double> x(10, 1.0);
    CHECK_THROWS_AS(apply_filter_zero_phase(x, f), std::invalid_argument);
}

TEST_CASE("resample length arithmetic") {
    std::vector<double> x(512, 0.0);
    CHECK(resample(x, 256.0, 128.0).size() == 256);
    CHECK(resample(x, 250.0, 128.0).size() == 262);  // round(512*128/250)
    CHECK(resample(x, 128.0, 128.0).size() == 512);
    CHECK_THROWS_AS(resample(x, 100.0, 128.0), std::invalid_argument);
}

TEST_CASE("resample preserves a 5 Hz sine") {
    const auto x = sine(5.0, 256.0, 4096);
    const auto y = resample(x, 256.0, 128.0);
    const auto fit = fit_sine(y, 5.0, 128.0, 64);
    CHECK(fit.amplitude == doctest::Approx(1.0).epsilon(0.01));
}

TEST_CASE("resample suppresses out-of-band 70 Hz content") {
    const auto x = sine(70.0, 256.0, 4096);
    const auto y = resample(x, 256.0, 128.0);
    const double ratio = rms(y, 64) / rms(x, 64);
    CHECK(20.0 * std::log10(ratio) <= -40.0);
}

TEST_CASE("window extraction counts and partition property") {
    WindowPlan plan;
    plan.window_len_s = 5;
    std::vector<double> x(10 * 128);
    std::iota(x.begin(), x.end(), 0.0);
    auto wins = extract_windows(x, plan);
    CHECK(wins.size() == 2);

    plan.window_len_s = 3;
    std::vector<double> x7(7 * 128);
    std::iota(x7.begin(), x7.end(), 0.0);
    wins = extract_windows(x7, plan);
    CHECK(wins.size() == 2);
    // concatenation of windows equals a prefix of the input
    size_t pos = 0;
    for (const auto& w : wins)
        for (double v : w) CHECK(v == x7[pos++]);

    plan.window_len_s = 1;
    std::vector<double> x_half(64);
    CHECK(extract_windows(x_half, plan).empty());
}

TEST_CASE("local segment counts for all window lengths") {
    for (const auto& [len, expected] : {std::pair{1, 2}, {3, 7}, {5, 13}}) {
        WindowPlan plan;
        plan.window_len_s = len;
        std::vector<double> w(plan.window_samples());
        std::iota(w.begin(), w.end(), 0.0);
        const auto segs = extract_local_segments(w, plan);
        CHECK(static_cast<int>(segs.size()) == expected);
        CHECK(static_cast<int>(segs.size()) == plan.n_local_segments());
        for (const auto& s : segs) CHECK(s.size() == 64);
        // hop of 48: segment k starts at 48k
        for (size_t k = 0; k < segs.size(); ++k) CHECK(segs[k][0] == 48.0 * k);
    }
    WindowPlan plan;
    plan.window_len_s = 1;
    std::vector<double> bad(100);
    CHECK_THROWS_AS(extract_local_segments(bad, plan), std::invalid_argument);
}
