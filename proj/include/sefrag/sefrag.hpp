#pragma once

#include "sefrag/analysis.hpp"
#include "sefrag/bench.hpp"
#include "sefrag/container.hpp"
#include "sefrag/core.hpp"
#include "sefrag/dispersion.hpp"
#include "sefrag/sharing.hpp"
#include "sefrag/wire.hpp"
