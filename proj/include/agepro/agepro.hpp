#pragma once

#include <agepro/bundle.hpp>
#include <agepro/config.hpp>
#include <agepro/dataset.hpp>
#include <agepro/error.hpp>
#include <agepro/geometry.hpp>
#include <agepro/hfa.hpp>
#include <agepro/image.hpp>
#include <agepro/log.hpp>
#include <agepro/patches.hpp>
#include <agepro/pipeline.hpp>
#include <agepro/region.hpp>
#include <agepro/sparse.hpp>
#include <agepro/synthval.hpp>
