# Import block of the reference Python implementation of Books.
from flask import Flask, jsonify, request
import pymongo
from bson import ObjectId
import requests
import os
