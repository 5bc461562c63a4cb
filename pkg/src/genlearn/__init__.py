"""genlearn: train classifiers with generator-synthesized pseudo-labeled data.

Fit a small generative model on task inputs, synthesize an unlabeled pool,
annotate it with a teacher classifier, and train students by self-training
or distillation. A companion risk-functional suite makes the underlying
objectives directly computable.
"""

from genlearn._kernels import BACKEND as KERNEL_BACKEND
from genlearn.corpus import (Dataset, Example, InputError, TaskSchema,
                             Vocabulary, build_vocab, dedup,
                             enforce_segment_count, load_dataset, mix,
                             save_dataset, split)
from genlearn.ngram import NGramLM, SamplerConfig, fit_ngram, perplexity, sample_text
from genlearn.gmm import (ClassConditionalGaussianMixture, GaussianMixture,
                          fit_class_conditional_gmm, fit_gmm, sample_gmm)
from genlearn.tabular import TabularGenerator
from genlearn.generate import (fit_class_conditional, generate_dataset,
                               generate_labeled_dataset, load_generator,
                               save_generator)
from genlearn.classifier import (ClassifierSpec, FeatureMap, TrainConfig,
                                 annotate, cross_entropy, evaluate, featurize,
                                 gradient_check, predict_soft, train)
from genlearn.risk import (GenerativeBayesClassifier, RiskEstimate,
                           VicinityConfig, bayes_posterior,
                           class_conditional_risk, combined_risk,
                           empirical_risk, generative_risk, vicinal_risk)
from genlearn.pipelines import (DistillConfig, RunReport, SelfTrainConfig,
                                confidence_filter, distill, fixmatch_step,
                                fixmatch_train, self_distill, self_train)
from genlearn.diagnostics import agreement, ngram_overlap, synthesis_stats

__version__ = "0.1.0"
