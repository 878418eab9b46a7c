#pragma once

#include "pun/avs.hpp"
#include "pun/evaluation.hpp"
#include "pun/external_predictor.hpp"
#include "pun/predictor.hpp"
#include "pun/simulator.hpp"
