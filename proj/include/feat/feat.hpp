#pragma once

#include "feat/attention_baseline.hpp"
#include "feat/autograd.hpp"
#include "feat/backbone.hpp"
#include "feat/bench.hpp"
#include "feat/channel_attention.hpp"
#include "feat/checkpoint.hpp"
#include "feat/config_file.hpp"
#include "feat/dataset.hpp"
#include "feat/diffusion.hpp"
#include "feat/grad_check.hpp"
#include "feat/image_io.hpp"
#include "feat/optimizer.hpp"
#include "feat/resvgm.hpp"
#include "feat/rng.hpp"
#include "feat/tensor.hpp"
#include "feat/train.hpp"
#include "feat/wkv.hpp"
