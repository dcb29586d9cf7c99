#pragma once

#include "dcdh/codes.hpp"
#include "dcdh/dataset.hpp"
#include "dcdh/dcc.hpp"
#include "dcdh/error.hpp"
#include "dcdh/grad_check.hpp"
#include "dcdh/losses.hpp"
#include "dcdh/mlp.hpp"
#include "dcdh/nets.hpp"
#include "dcdh/retrieval.hpp"
#include "dcdh/train.hpp"
