#include "fan/nn.hpp"

namespace fan::nn {

std::vector<FanConfig> size_sweep_configs(const FanConfig& base) {
    std::vector<FanConfig> ladder;
    for (int s = base.num_stacks; s >= 1; --s) {
        FanConfig c = base;
        c.num_stacks = s;
        ladder.push_back(c);
    }
    // width reductions at a single stack; keep the hierarchical split valid
    const int64_t w = base.width;
    const int64_t candidates[] = {w * 3 / 4, w / 2, w * 3 / 8, w / 4};
    for (int64_t cw : candidates) {
        if (cw < 8 || cw % 8 != 0) continue;
        FanConfig c = base;
        c.num_stacks = 1;
        c.width = cw;
        ladder.push_back(c);
    }
    return ladder;
}

std::vector<FanConfig> size_sweep_configs() { return size_sweep_configs(FanConfig{}); }

}  // namespace fan::nn
