# -*- coding: utf-8 -*-
#
# SongShield documentation build configuration file.

import sys
import os

sys.path.insert(0, os.path.abspath('..'))

extensions = [
    'sphinx.ext.autodoc',
]

# Heavy numeric dependencies are not needed to render the API pages.
autodoc_mock_imports = ['torch', 'librosa', 'soundfile', 'scipy']

templates_path = ['_templates']
source_suffix = '.rst'
master_doc = 'index'

project = u'SongShield: Singing Voice Protection'
copyright = u'2026, The SongShield developers'

version = '0.1'
release = '0.1.0'

exclude_patterns = ['_build']
pygments_style = 'sphinx'

html_theme = 'alabaster'
html_static_path = ['_static']
htmlhelp_basename = 'SongShielddoc'

latex_elements = {
}
latex_documents = [
  ('index', 'SongShield.tex', u'SongShield Documentation',
   u'The SongShield developers', 'manual'),
]

man_pages = [
    ('index', 'songshield', u'SongShield Documentation',
     [u'The SongShield developers'], 1)
]
