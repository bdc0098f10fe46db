#pragma once

// Umbrella header: pulls in the whole library.

#include "fedstlf/error.hpp"
#include "fedstlf/rng.hpp"
#include "fedstlf/core/tensor.hpp"
#include "fedstlf/core/tape.hpp"
#include "fedstlf/core/ops.hpp"
#include "fedstlf/core/layers.hpp"
#include "fedstlf/core/adam.hpp"
#include "fedstlf/core/gradcheck.hpp"
#include "fedstlf/data/series.hpp"
#include "fedstlf/data/cleaning.hpp"
#include "fedstlf/data/features.hpp"
#include "fedstlf/data/fft.hpp"
#include "fedstlf/data/windows.hpp"
#include "fedstlf/synthetic.hpp"
#include "fedstlf/models/parameter_set.hpp"
#include "fedstlf/models/models.hpp"
#include "fedstlf/models/training.hpp"
#include "fedstlf/clustering.hpp"
#include "fedstlf/evaluation.hpp"
#include "fedstlf/federated/transport.hpp"
#include "fedstlf/federated/federated.hpp"
#include "fedstlf/experiment.hpp"
