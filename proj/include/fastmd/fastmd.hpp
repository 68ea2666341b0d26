#pragma once

#include "fastmd/common.hpp"
#include "fastmd/ctc.hpp"
#include "fastmd/decode.hpp"
#include "fastmd/io.hpp"
#include "fastmd/io_vocab.hpp"
#include "fastmd/metrics.hpp"
#include "fastmd/model.hpp"
#include "fastmd/nnet.hpp"
#include "fastmd/sampling.hpp"
#include "fastmd/tensor.hpp"
#include "fastmd/verify.hpp"
