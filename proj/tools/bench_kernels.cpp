// Times the OpenMP compute kernels against their serial reference
// implementations and cross-checks that both produce identical bits.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <random>
#include <string>
#include <vector>

#include "stylelab/kernels.hpp"

using stylelab::kernels::ConvGeom;
namespace K = stylelab::kernels;

namespace {

std::vector<float> random_vec(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> d(-1.0f, 1.0f);
  std::vector<float> v(n);
  for (float& x : v) x = d(rng);
  return v;
}

template <typename F>
double time_best_of(int reps, F&& fn) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    best = std::min(best, std::chrono::duration<double>(t1 - t0).count());
  }
  return best;
}

void report(const char* name, double ref_s, double omp_s, bool bit_equal) {
  std::printf("%-22s ref %8.3f ms   omp %8.3f ms   speedup %5.2fx   %s\n",
              name, ref_s * 1e3, omp_s * 1e3, ref_s / omp_s,
              bit_equal ? "bit-identical" : "MISMATCH");
}

}  // namespace

int main() {
  // ---- conv2d forward + backward, stage-2-sized problem
  {
    ConvGeom g;
    g.cin = 32;
    g.h = g.w = 48;
    g.cout = 32;
    g.k = 3;
    g.stride = 1;
    g.pad = 1;
    const auto x = random_vec(static_cast<std::size_t>(g.cin * g.h * g.w), 1);
    const auto w =
        random_vec(static_cast<std::size_t>(g.cout * g.cin * g.k * g.k), 2);
    const auto b = random_vec(static_cast<std::size_t>(g.cout), 3);
    const std::size_t ylen = static_cast<std::size_t>(g.cout * g.oh() * g.ow());
    std::vector<float> y_ref(ylen), y_omp(ylen);

    const double t_ref = time_best_of(
        5, [&] { K::ref::conv2d_fwd(g, x.data(), w.data(), b.data(), y_ref.data()); });
    const double t_omp = time_best_of(
        5, [&] { K::conv2d_fwd(g, x.data(), w.data(), b.data(), y_omp.data()); });
    report("conv2d fwd 32x48x48", t_ref, t_omp,
           std::memcmp(y_ref.data(), y_omp.data(), ylen * sizeof(float)) == 0);

    const auto gy = random_vec(ylen, 4);
    std::vector<float> gx_ref(x.size()), gx_omp(x.size());
    const double bi_ref = time_best_of(
        5, [&] { K::ref::conv2d_bwd_input(g, gy.data(), w.data(), gx_ref.data()); });
    const double bi_omp = time_best_of(
        5, [&] { K::conv2d_bwd_input(g, gy.data(), w.data(), gx_omp.data()); });
    report("conv2d bwd-input", bi_ref, bi_omp,
           std::memcmp(gx_ref.data(), gx_omp.data(),
                       gx_ref.size() * sizeof(float)) == 0);

    std::vector<float> gw_ref(w.size()), gw_omp(w.size());
    const double bw_ref = time_best_of(
        5, [&] { K::ref::conv2d_bwd_weight(g, gy.data(), x.data(), gw_ref.data()); });
    const double bw_omp = time_best_of(
        5, [&] { K::conv2d_bwd_weight(g, gy.data(), x.data(), gw_omp.data()); });
    report("conv2d bwd-weight", bw_ref, bw_omp,
           std::memcmp(gw_ref.data(), gw_omp.data(),
                       gw_ref.size() * sizeof(float)) == 0);
  }

  // ---- matmul, gram-sized problem (c x hw times hw x c)
  {
    const int64_t m = 64, k = 2304, n = 64;
    const auto a = random_vec(static_cast<std::size_t>(m * k), 5);
    const auto b = random_vec(static_cast<std::size_t>(k * n), 6);
    std::vector<float> c_ref(static_cast<std::size_t>(m * n)),
        c_omp(static_cast<std::size_t>(m * n));
    const double t_ref = time_best_of(
        5, [&] { K::ref::matmul(a.data(), b.data(), c_ref.data(), m, k, n); });
    const double t_omp = time_best_of(
        5, [&] { K::matmul(a.data(), b.data(), c_omp.data(), m, k, n); });
    report("matmul 64x2304x64", t_ref, t_omp,
           std::memcmp(c_ref.data(), c_omp.data(),
                       c_ref.size() * sizeof(float)) == 0);
  }
  return 0;
}
