#pragma once

#include "adr.hpp"
#include "attacks.hpp"
#include "augment.hpp"
#include "classifier.hpp"
#include "config.hpp"
#include "crs.hpp"
#include "dataset.hpp"
#include "error.hpp"
#include "metrics.hpp"
#include "rng.hpp"
#include "tape.hpp"
#include "tensor.hpp"
#include "trainer.hpp"
