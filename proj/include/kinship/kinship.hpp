#pragma once

#include "kinship/calibration.hpp"
#include "kinship/embedding_store.hpp"
#include "kinship/error.hpp"
#include "kinship/finetune.hpp"
#include "kinship/pair_sampler.hpp"
#include "kinship/pairs.hpp"
#include "kinship/retrieval.hpp"
#include "kinship/rng.hpp"
#include "kinship/similarity.hpp"
#include "kinship/synthetic.hpp"
