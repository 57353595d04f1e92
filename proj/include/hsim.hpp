#pragma once

#include "hsim/corpus.hpp"
#include "hsim/error.hpp"
#include "hsim/eval.hpp"
#include "hsim/greedy.hpp"
#include "hsim/pipeline.hpp"
#include "hsim/simcore.hpp"
#include "hsim/snapshot.hpp"
#include "hsim/sparse.hpp"
#include "hsim/synthetic.hpp"
#include "hsim/vbayes.hpp"
