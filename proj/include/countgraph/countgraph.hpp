#pragma once

#include "countgraph/counting.hpp"
#include "countgraph/fusion.hpp"
#include "countgraph/geometry.hpp"
#include "countgraph/gradcheck.hpp"
#include "countgraph/metrics.hpp"
#include "countgraph/oracle.hpp"
#include "countgraph/plf.hpp"
#include "countgraph/scene_io.hpp"
#include "countgraph/synth.hpp"
#include "countgraph/train.hpp"
#include "countgraph/union_find.hpp"
