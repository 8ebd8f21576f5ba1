#pragma once

#include "pseudocl/checkpoint.hpp"
#include "pseudocl/clustering.hpp"
#include "pseudocl/config.hpp"
#include "pseudocl/dataset.hpp"
#include "pseudocl/errors.hpp"
#include "pseudocl/labeling.hpp"
#include "pseudocl/linalg.hpp"
#include "pseudocl/metrics.hpp"
#include "pseudocl/nn.hpp"
#include "pseudocl/protocol.hpp"
#include "pseudocl/report.hpp"
#include "pseudocl/rng.hpp"
