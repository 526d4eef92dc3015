#pragma once

#include "pwseg/annotate.hpp"
#include "pwseg/autodiff.hpp"
#include "pwseg/checkpoint.hpp"
#include "pwseg/config.hpp"
#include "pwseg/error.hpp"
#include "pwseg/losses.hpp"
#include "pwseg/metrics.hpp"
#include "pwseg/network.hpp"
#include "pwseg/pmsa.hpp"
#include "pwseg/points.hpp"
#include "pwseg/pseudolabel.hpp"
#include "pwseg/rng.hpp"
#include "pwseg/synth.hpp"
#include "pwseg/volio.hpp"
#include "pwseg/volume.hpp"
