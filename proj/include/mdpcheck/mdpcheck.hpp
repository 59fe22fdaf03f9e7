#ifndef MDPCHECK_MDPCHECK_HPP_
#define MDPCHECK_MDPCHECK_HPP_

#include "mdpcheck/analysis.hpp"
#include "mdpcheck/dataset.hpp"
#include "mdpcheck/env.hpp"
#include "mdpcheck/error.hpp"
#include "mdpcheck/mdn.hpp"
#include "mdpcheck/outcome.hpp"
#include "mdpcheck/parallel.hpp"
#include "mdpcheck/pipeline.hpp"
#include "mdpcheck/report.hpp"
#include "mdpcheck/rng.hpp"

#endif  // MDPCHECK_MDPCHECK_HPP_
