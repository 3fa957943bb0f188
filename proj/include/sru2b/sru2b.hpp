#pragma once

#include "sru2b/checkpoint.hpp"
#include "sru2b/config.hpp"
#include "sru2b/datamodel.hpp"
#include "sru2b/encoders.hpp"
#include "sru2b/error.hpp"
#include "sru2b/evalrank.hpp"
#include "sru2b/model.hpp"
#include "sru2b/numcore.hpp"
#include "sru2b/objective.hpp"
#include "sru2b/params.hpp"
#include "sru2b/rng.hpp"
#include "sru2b/syngen.hpp"
#include "sru2b/trainer.hpp"
#include "sru2b/vocab.hpp"
