#pragma once

#include "mctnet/error.hpp"
#include "mctnet/rng.hpp"
#include "mctnet/quantum.hpp"
#include "mctnet/landscape.hpp"
#include "mctnet/autoencoder.hpp"
#include "mctnet/kmeans.hpp"
#include "mctnet/confusion.hpp"
#include "mctnet/introspection.hpp"
#include "mctnet/oracle.hpp"
#include "mctnet/io.hpp"
#include "mctnet/pipeline.hpp"
