#pragma once

// Core library. PNG and file I/O live under texsr/io/ and are included separately.

#include "texsr/atlas.hpp"
#include "texsr/baseline.hpp"
#include "texsr/error.hpp"
#include "texsr/learn.hpp"
#include "texsr/metrics.hpp"
#include "texsr/operators.hpp"
#include "texsr/parallel.hpp"
#include "texsr/prior.hpp"
#include "texsr/problem.hpp"
#include "texsr/raster.hpp"
#include "texsr/solver.hpp"
#include "texsr/sparse.hpp"
#include "texsr/synth.hpp"
