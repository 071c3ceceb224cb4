#pragma once

#include "t2m/common.hpp"
#include "t2m/corpus.hpp"
#include "t2m/embeddings.hpp"
#include "t2m/encoders.hpp"
#include "t2m/evaluation.hpp"
#include "t2m/model.hpp"
#include "t2m/nn.hpp"
#include "t2m/recurrent.hpp"
#include "t2m/sentences.hpp"
#include "t2m/training.hpp"
