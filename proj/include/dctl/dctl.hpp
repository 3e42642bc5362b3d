#pragma once

#include "dctl/conv.hpp"
#include "dctl/errors.hpp"
#include "dctl/eval.hpp"
#include "dctl/io.hpp"
#include "dctl/model.hpp"
#include "dctl/prox.hpp"
