#include <benchmark/benchmark.h>

#include "dtp/correspondence.hpp"
#include "dtp/losses.hpp"
#include "dtp/nn.hpp"
#include "dtp/ops.hpp"
#include "dtp/pipeline.hpp"
#include "dtp/random.hpp"

namespace {

using namespace dtp;

Tensor<float> noise(Shape shape, std::uint64_t seed, bool grad = false) {
  Rng rng(seed, 11);
  Tensor<float> t(std::move(shape), grad);
  for (auto& v : t.data()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  return t;
}

// args: channels in/out, spatial extent
void BM_Conv2dForward(benchmark::State& st) {
  const std::size_t c = st.range(0), hw = st.range(1);
  auto x = noise({1, c, hw, hw}, 1);
  auto w = noise({c, c, 3, 3}, 2);
  auto b = noise({c}, 3);
  for (auto _ : st) {
    Graph<float> g;
    benchmark::DoNotOptimize(conv2d(g, x, w, b, 1, 1).data().data());
  }
  st.SetItemsProcessed(st.iterations() * c * c * 9 * hw * hw);
}
BENCHMARK(BM_Conv2dForward)->Args({64, 64})->Args({128, 32})->Args({256, 16})->Unit(benchmark::kMillisecond);

void BM_Conv2dBackward(benchmark::State& st) {
  const std::size_t c = st.range(0), hw = st.range(1);
  auto x = noise({1, c, hw, hw}, 1, true);
  auto w = noise({c, c, 3, 3}, 2, true);
  auto b = noise({c}, 3, true);
  for (auto _ : st) {
    x.zero_grad();
    w.zero_grad();
    b.zero_grad();
    Graph<float> g;
    g.backward(sum(g, conv2d(g, x, w, b, 1, 1)));
  }
}
BENCHMARK(BM_Conv2dBackward)->Args({64, 64})->Args({256, 16})->Unit(benchmark::kMillisecond);

// correlation + softmax + feature and image warps at one tap resolution
void BM_CorrelationWarp(benchmark::State& st) {
  const std::size_t hw = st.range(0);
  auto fcm = noise({1, 256, hw, hw}, 4);
  auto fsm = noise({1, 256, hw, hw}, 5);
  auto img = noise({1, 3, hw, hw}, 6);
  for (auto _ : st) {
    Graph<float> g;
    auto fc = flatten(g, fcm);
    auto fs = flatten(g, fsm);
    auto corr = correlation(g, fc, fs, 0.07f);
    auto w = warp_weights(g, corr);
    benchmark::DoNotOptimize(apply_warp(g, w, fs, hw, hw).rows.data().data());
    benchmark::DoNotOptimize(apply_warp_image(g, w, img, hw, hw).data().data());
  }
}
BENCHMARK(BM_CorrelationWarp)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_StyleLossNN(benchmark::State& st) {
  const std::size_t c = st.range(0), hw = st.range(1);
  TapMap<float> out{{"relu3_4", noise({1, c, hw, hw}, 7, true)}};
  TapMap<float> sty{{"relu3_4", noise({1, c, hw, hw}, 8)}};
  LayerSet ls;
  ls.style_layers = {"relu3_4"};
  for (auto _ : st) {
    Graph<float> g;
    benchmark::DoNotOptimize(style_loss(g, out, sty, ls).item());
  }
}
BENCHMARK(BM_StyleLossNN)->Args({128, 32})->Args({256, 16})->Unit(benchmark::kMillisecond);

void BM_ContrastiveNll(benchmark::State& st) {
  const std::size_t p = st.range(0), c = st.range(1);
  auto q = noise({p, c}, 9, true);
  auto k = noise({p, c}, 10, true);
  for (auto _ : st) {
    q.zero_grad();
    k.zero_grad();
    Graph<float> g;
    auto l = contrastive_nll(g, normalize_rows(g, q, 1e-8f), normalize_rows(g, k, 1e-8f), 0.07f);
    g.backward(l);
  }
}
BENCHMARK(BM_ContrastiveNll)->Args({1024, 128})->Args({4096, 128})->Unit(benchmark::kMillisecond);

void BM_DtpIteration(benchmark::State& st) {
  const std::size_t s = st.range(0);
  Image content(s, s), style(s, s);
  Rng rng(12, 1);
  for (auto& v : content.pixels) v = static_cast<float>(rng.uniform(0.0, 1.0));
  for (auto& v : style.pixels) v = static_cast<float>(rng.uniform(0.0, 1.0));
  DtpConfig cfg;
  cfg.size = s;
  DtpSession session(content, style, cfg);
  for (auto _ : st) benchmark::DoNotOptimize(session.step().l_total);
}
BENCHMARK(BM_DtpIteration)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
