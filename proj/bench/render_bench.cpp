#include <benchmark/benchmark.h>

#include "splat/rasterizer.hpp"
#include "splat/synthetic.hpp"

namespace {

using namespace splat;

SyntheticBundle& bundle() {
    static SyntheticBundle b = [] {
        SyntheticSceneSpec spec;
        spec.geometry = GeometryPreset::TwoPlanes;
        spec.resolution = 48;
        spec.image_width = 128;
        spec.image_height = 128;
        return generate_synthetic(spec, 1);
    }();
    return b;
}

void bm_render_tiled(benchmark::State& state) {
    const SyntheticBundle& b = bundle();
    RasterConfig cfg;
    cfg.threads = static_cast<int>(state.range(0));
    for (auto _ : state) {
        RenderOutput out = render(b.scene_truth, b.intrinsics_truth, CameraPose{}, cfg);
        benchmark::DoNotOptimize(out.color.data.data());
    }
}

void bm_render_reference(benchmark::State& state) {
    const SyntheticBundle& b = bundle();
    RasterConfig cfg;
    for (auto _ : state) {
        RenderOutput out = render_reference(b.scene_truth, b.intrinsics_truth, CameraPose{}, cfg);
        benchmark::DoNotOptimize(out.color.data.data());
    }
}

}  // namespace

BENCHMARK(bm_render_tiled)->Arg(1)->Arg(0)->Unit(benchmark::kMillisecond);
BENCHMARK(bm_render_reference)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
