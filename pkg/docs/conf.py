#!/usr/bin/env python
#
# attneraser documentation build configuration file

import os
import sys
sys.path.insert(0, os.path.abspath('..'))

import attneraser

extensions = ['sphinx.ext.autodoc', 'sphinx.ext.viewcode']

templates_path = ['_templates']
source_suffix = '.rst'
master_doc = 'index'

project = 'attneraser'
copyright = "2026, attneraser developers"
author = "attneraser developers"

version = attneraser.__version__
release = attneraser.__version__

exclude_patterns = ['_build', 'Thumbs.db', '.DS_Store']
pygments_style = 'sphinx'

html_theme = 'alabaster'
html_static_path = ['_static']
htmlhelp_basename = 'attneraserdoc'

latex_documents = [
    (master_doc, 'attneraser.tex', 'attneraser Documentation', author, 'manual'),
]

man_pages = [
    (master_doc, 'attneraser', 'attneraser Documentation', [author], 1)
]

texinfo_documents = [
    (master_doc, 'attneraser', 'attneraser Documentation', author, 'attneraser',
     'Object removal by self-attention redirection guidance.', 'Miscellaneous'),
]
