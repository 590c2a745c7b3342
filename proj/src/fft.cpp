#include "sarmatch/fft.hpp"

#include <cmath>
#include <map>
#include <memory>
#include <mutex>

#include "sarmatch/errors.hpp"

namespace sarmatch::fft {

namespace {

constexpr double kTau = 6.283185307179586476925286766559;

bool is_pow2(int n) { return n > 0 && (n & (n - 1)) == 0; }

int smallest_factor(int n) {
    for (int p = 2; p * p <= n; ++p)
        if (n % p == 0) return p;
    return n;
}

// Cached unit roots exp(-i*tau*j/n), j in [0,n). Shared across threads.
std::shared_ptr<const std::vector<cd>> twiddles(int n) {
    static std::mutex mtx;
    static std::map<int, std::shared_ptr<const std::vector<cd>>> cache;
    std::lock_guard<std::mutex> lock(mtx);
    auto it = cache.find(n);
    if (it != cache.end()) return it->second;
    auto t = std::make_shared<std::vector<cd>>(n);
    for (int j = 0; j < n; ++j) {
        const double a = -kTau * j / n;
        (*t)[j] = cd(std::cos(a), std::sin(a));
    }
    cache.emplace(n, t);
    return t;
}

void fft_pow2(cd* a, int n, bool inverse) {
    // bit-reversal permutation
    for (int i = 1, j = 0; i < n; ++i) {
        int bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    auto tw = twiddles(n);
    const cd* w = tw->data();
    for (int len = 2; len <= n; len <<= 1) {
        const int step = n / len;
        const int half = len / 2;
        for (int i = 0; i < n; i += len) {
            for (int j = 0; j < half; ++j) {
                cd ww = w[static_cast<size_t>(j) * step];
                if (inverse) ww = std::conj(ww);
                const cd u = a[i + j];
                const cd v = a[i + j + half] * ww;
                a[i + j] = u + v;
                a[i + j + half] = u - v;
            }
        }
    }
}

void fft_any(cd* a, int n, bool inverse);

// Chirp-z for prime n via a power-of-two convolution.
void bluestein(cd* a, int n, bool inverse) {
    int m = 1;
    while (m < 2 * n - 1) m <<= 1;
    std::vector<cd> chirp(n);
    for (int k = 0; k < n; ++k) {
        // k^2 mod 2n keeps the angle in range
        const long long k2 = (static_cast<long long>(k) * k) % (2LL * n);
        const double ang = (inverse ? 1.0 : -1.0) * kTau * 0.5 * static_cast<double>(k2) / n;
        chirp[k] = cd(std::cos(ang), std::sin(ang));
    }
    std::vector<cd> u(m, cd(0, 0)), v(m, cd(0, 0));
    for (int k = 0; k < n; ++k) u[k] = a[k] * chirp[k];
    v[0] = std::conj(chirp[0]);
    for (int k = 1; k < n; ++k) v[k] = v[m - k] = std::conj(chirp[k]);
    fft_pow2(u.data(), m, false);
    fft_pow2(v.data(), m, false);
    for (int k = 0; k < m; ++k) u[k] *= v[k];
    fft_pow2(u.data(), m, true);
    const double inv_m = 1.0 / m;
    for (int k = 0; k < n; ++k) a[k] = u[k] * inv_m * chirp[k];
}

void fft_any(cd* a, int n, bool inverse) {
    if (n <= 1) return;
    if (is_pow2(n)) {
        fft_pow2(a, n, inverse);
        return;
    }
    const int p = smallest_factor(n);
    if (p == n) {
        if (n > 31) {
            bluestein(a, n, inverse);
            return;
        }
        // small prime: direct DFT
        auto tw = twiddles(n);
        const cd* w = tw->data();
        std::vector<cd> out(n);
        for (int k = 0; k < n; ++k) {
            cd s(0, 0);
            for (int j = 0; j < n; ++j) {
                cd ww = w[static_cast<size_t>(j) * k % n];
                if (inverse) ww = std::conj(ww);
                s += a[j] * ww;
            }
            out[k] = s;
        }
        std::copy(out.begin(), out.end(), a);
        return;
    }
    // Cooley-Tukey: n = p * m, decimation in time over residues mod p
    const int m = n / p;
    std::vector<cd> tmp(n);
    for (int r = 0; r < p; ++r)
        for (int t = 0; t < m; ++t) tmp[static_cast<size_t>(r) * m + t] = a[static_cast<size_t>(t) * p + r];
    for (int r = 0; r < p; ++r) fft_any(tmp.data() + static_cast<size_t>(r) * m, m, inverse);

    auto tw = twiddles(n);
    const cd* w = tw->data();
    std::vector<cd> term(p);
    for (int k1 = 0; k1 < m; ++k1) {
        for (int r = 0; r < p; ++r) {
            cd ww = w[static_cast<size_t>(r) * k1 % n];
            if (inverse) ww = std::conj(ww);
            term[r] = tmp[static_cast<size_t>(r) * m + k1] * ww;
        }
        for (int k2 = 0; k2 < p; ++k2) {
            cd s(0, 0);
            for (int r = 0; r < p; ++r) {
                cd ww = w[(static_cast<size_t>(r) * k2 % p) * m];  // w_p^{r k2}
                if (inverse) ww = std::conj(ww);
                s += term[r] * ww;
            }
            a[static_cast<size_t>(k2) * m + k1] = s;
        }
    }
}

}  // namespace

int next_fast_size(int n) {
    if (n < 1) throw ArgumentError("next_fast_size: n must be positive");
    for (;; ++n) {
        int m = n;
        for (int p : {2, 3, 5})
            while (m % p == 0) m /= p;
        if (m == 1) return n;
    }
}

bool is_fast_size(int n) {
    if (n < 1) return false;
    for (int p : {2, 3, 5})
        while (n % p == 0) n /= p;
    return n == 1;
}

void fft(std::vector<cd>& a, bool inverse) {
    const int n = static_cast<int>(a.size());
    if (n == 0) throw ArgumentError("fft: empty input");
    fft_any(a.data(), n, inverse);
    if (inverse) {
        const double inv = 1.0 / n;
        for (auto& v : a) v *= inv;
    }
}

namespace {

void fft2_dir(std::vector<cd>& a, int h, int w, bool inverse) {
    if (h <= 0 || w <= 0) throw ArgumentError("fft2: non-positive dims");
    if (static_cast<size_t>(h) * w != a.size()) throw ArgumentError("fft2: buffer size mismatch");
#pragma omp parallel for schedule(static) if (h > 8)
    for (int y = 0; y < h; ++y) fft_any(a.data() + static_cast<size_t>(y) * w, w, inverse);
#pragma omp parallel for schedule(static) if (w > 8)
    for (int x = 0; x < w; ++x) {
        std::vector<cd> col(h);
        for (int y = 0; y < h; ++y) col[y] = a[static_cast<size_t>(y) * w + x];
        fft_any(col.data(), h, inverse);
        for (int y = 0; y < h; ++y) a[static_cast<size_t>(y) * w + x] = col[y];
    }
}

}  // namespace

void fft2(std::vector<cd>& a, int h, int w) { fft2_dir(a, h, w, false); }

void ifft2(std::vector<cd>& a, int h, int w) {
    fft2_dir(a, h, w, true);
    const double inv = 1.0 / (static_cast<double>(h) * w);
    for (auto& v : a) v *= inv;
}

std::vector<cd> fft2_real(std::span<const float> data, int h, int w, int out_h, int out_w) {
    if (h <= 0 || w <= 0 || out_h <= 0 || out_w <= 0)
        throw ArgumentError("fft2_real: non-positive dims");
    if (out_h < h || out_w < w)
        throw ArgumentError("fft2_real: output dims must cover input (" + std::to_string(out_h) +
                            "x" + std::to_string(out_w) + " < " + std::to_string(h) + "x" +
                            std::to_string(w) + ")");
    if (static_cast<size_t>(h) * w != data.size())
        throw ArgumentError("fft2_real: data size mismatch");
    std::vector<cd> buf(static_cast<size_t>(out_h) * out_w, cd(0, 0));
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            buf[static_cast<size_t>(y) * out_w + x] = cd(data[static_cast<size_t>(y) * w + x], 0.0);
    fft2(buf, out_h, out_w);
    return buf;
}

}  // namespace sarmatch::fft
