#include <benchmark/benchmark.h>

#include <string>

#include "rsgen/diffusion.hpp"
#include "rsgen/fidlab.hpp"
#include "rsgen/ingest.hpp"
#include "rsgen/promptforge.hpp"
#include "rsgen/rng.hpp"

namespace {

using namespace rsgen;

void BM_FrechetDistance(benchmark::State& state) {
    const auto d = static_cast<Eigen::Index>(state.range(0));
    Rng rng(1);
    Eigen::MatrixXd xa(4 * d, d), xb(4 * d, d);
    for (Eigen::Index i = 0; i < xa.rows(); ++i)
        for (Eigen::Index j = 0; j < d; ++j) {
            xa(i, j) = rng.normal();
            xb(i, j) = rng.normal() + 0.5;
        }
    const auto a = fidlab::fit_gaussian(xa), b = fidlab::fit_gaussian(xb);
    for (auto _ : state) benchmark::DoNotOptimize(fidlab::frechet_distance(a, b));
}
BENCHMARK(BM_FrechetDistance)->Arg(16)->Arg(64)->Arg(256);

void BM_ChunkCorpus(benchmark::State& state) {
    Rng rng(2);
    std::string text;
    while (text.size() < static_cast<std::size_t>(state.range(0))) {
        text += "word";
        text += rng.bernoulli(0.1) ? ". " : " ";
    }
    for (auto _ : state) benchmark::DoNotOptimize(promptforge::chunk_corpus(text));
    state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations()) * state.range(0));
}
BENCHMARK(BM_ChunkCorpus)->Arg(1 << 16)->Arg(1 << 20);

Raster stub(int side) {
    PromptSpec p;
    p.class_name = "Water Body";
    p.positive = "lagoon";
    p.width = p.height = side;
    return render_procedural(p);
}

void BM_Resize(benchmark::State& state) {
    const Raster img = stub(512);
    for (auto _ : state) benchmark::DoNotOptimize(ingest::resize_to(img, static_cast<int>(state.range(0))));
}
BENCHMARK(BM_Resize)->Arg(224)->Arg(16);

void BM_AugmentDihedral(benchmark::State& state) {
    const Raster img = stub(static_cast<int>(state.range(0)));
    for (auto _ : state) benchmark::DoNotOptimize(ingest::augment_dihedral(img));
}
BENCHMARK(BM_AugmentDihedral)->Arg(224);

}  // namespace

BENCHMARK_MAIN();
