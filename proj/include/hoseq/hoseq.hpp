#pragma once

#include "hoseq/config.hpp"
#include "hoseq/control.hpp"
#include "hoseq/csv.hpp"
#include "hoseq/error.hpp"
#include "hoseq/features.hpp"
#include "hoseq/handover.hpp"
#include "hoseq/linalg.hpp"
#include "hoseq/metrics.hpp"
#include "hoseq/models.hpp"
#include "hoseq/pipeline.hpp"
#include "hoseq/radio_sim.hpp"
#include "hoseq/rng.hpp"
#include "hoseq/trace.hpp"
#include "hoseq/train.hpp"
#include "hoseq/version.hpp"
