#pragma once

#include "emb/error.hpp"
#include "emb/runtime.hpp"
#include "emb/tensor/tensor.hpp"
#include "emb/tensor/ops.hpp"
#include "emb/tensor/optim.hpp"
#include "emb/tensor/gradcheck.hpp"
#include "emb/tensor/parameters.hpp"
#include "emb/encoders/attention.hpp"
#include "emb/encoders/guided.hpp"
#include "emb/encoders/mgin.hpp"
#include "emb/heads/fusion.hpp"
#include "emb/heads/endpoints.hpp"
#include "emb/heads/proposals.hpp"
#include "emb/heads/losses.hpp"
#include "emb/elastic/interval.hpp"
#include "emb/elastic/bounding.hpp"
#include "emb/data/annotations.hpp"
#include "emb/data/features.hpp"
#include "emb/data/sampling.hpp"
#include "emb/data/synthetic.hpp"
#include "emb/data/batch.hpp"
#include "emb/model/emb_model.hpp"
#include "emb/eval/supervision.hpp"
#include "emb/eval/metrics.hpp"
#include "emb/eval/config.hpp"
#include "emb/eval/experiment.hpp"
#include "emb/eval/report.hpp"
#include "emb/eval/gradcheck_suite.hpp"
