#pragma once

#include "flowreg/ablation.hpp"
#include "flowreg/core.hpp"
#include "flowreg/flowmodel.hpp"
#include "flowreg/gradcheck.hpp"
#include "flowreg/io.hpp"
#include "flowreg/losses.hpp"
#include "flowreg/metrics.hpp"
#include "flowreg/normals.hpp"
#include "flowreg/parallel.hpp"
#include "flowreg/synth.hpp"
