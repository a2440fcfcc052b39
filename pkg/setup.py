from setuptools import find_packages,setup
from typing import List

HYPEN_E_DOT='-e .'
def get_requirements(file_path:str)->List[str]:
    '''
    this function will return the list of requirements
    (comment and blank lines skipped)
    '''
    requirements=[]
    with open(file_path) as file_obj:
        requirements=[req.strip() for req in file_obj.readlines()]
        requirements=[req for req in requirements if req and not req.startswith("#")]

        if HYPEN_E_DOT in requirements:
            requirements.remove(HYPEN_E_DOT)
    
    return requirements

setup(
name='sagegan',
version='0.1.0',
description='Attention U-Net segmentation with a segmentation-aware style GAN for SEM nanoparticle images',
packages=find_packages(exclude=["examples", "examples.*"]),
py_modules=['app'],
install_requires=get_requirements('requirements.txt'),
entry_points={'console_scripts': ['sagegan=app:main']},

)
